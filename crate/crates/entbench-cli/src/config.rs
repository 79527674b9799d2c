//! Run configuration: channel presets, unit-tagged quantities, config-file
//! loading, and the merge of file values with command-line flags into one
//! fully resolved, validated run description.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use entbench::bench::DEFAULT_PULSE_RATE;
use entbench::channel::ChannelModel;
use entbench::error::{EntError, EntResult};
use entbench::quant::SolverConfig;

/// Default pulses per batch (and per sweep grid point).
pub const DEFAULT_PULSES: u64 = 100_000;

/// Default RNG seed.
pub const DEFAULT_SEED: u64 = 1;

/// Physical units a config scalar may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Shot-noise units: vacuum quadrature variance = 1.
    Snl,
    /// Hertz.
    Hz,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Snl => "snl",
            Unit::Hz => "hz",
        })
    }
}

/// A scalar with an explicit unit tag, so config files stay unambiguous
/// about normalization: `{"value": 0.02, "unit": "snl"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tagged {
    pub value: f64,
    pub unit: Unit,
}

impl Tagged {
    pub fn new(value: f64, unit: Unit) -> Self {
        Tagged { value, unit }
    }

    /// Returns the value after checking the tag against the expected unit.
    pub fn expect(&self, unit: Unit, what: &str) -> EntResult<f64> {
        if self.unit != unit {
            return Err(EntError::invalid(format!(
                "{what} must be tagged `{unit}`, got `{}`",
                self.unit
            )));
        }
        Ok(self.value)
    }
}

/// A named channel working configuration. The default probe amplitude is the
/// optimal working point of that channel.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub transmission: f64,
    pub excess_noise_snl: f64,
    pub default_alpha: f64,
}

/// Reference fiber links: 20 km (T = 0.24, ε = 0.02) and 40 km
/// (T = 0.09, ε = 0.04), receiver efficiency folded into T.
pub const PRESETS: [Preset; 2] = [
    Preset {
        name: "20km",
        transmission: 0.24,
        excess_noise_snl: 0.02,
        default_alpha: 0.3,
    },
    Preset {
        name: "40km",
        transmission: 0.09,
        excess_noise_snl: 0.04,
        default_alpha: 0.17,
    },
];

/// Looks a preset up by name, tolerating case and internal spaces
/// ("20 km" ≡ "20km").
pub fn find_preset(name: &str) -> EntResult<&'static Preset> {
    let key: String = name
        .trim()
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect::<String>()
        .to_ascii_lowercase();
    PRESETS.iter().find(|p| p.name == key).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        EntError::invalid(format!(
            "unknown preset `{name}`; available: {}",
            names.join(", ")
        ))
    })
}

/// Declarative run description, loadable from a JSON config file. Every field
/// is optional: command-line flags override file values, a preset fills in
/// the channel, and anything still missing falls back to documented defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Channel preset name; explicit channel fields override its values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Total power transmission T ∈ (0, 1].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transmission: Option<f64>,
    /// Excess quadrature variance, tagged `snl`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excess_noise: Option<Tagged>,
    /// Calibration amplitude of the phase reference; absent = perfect
    /// reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_amplitude: Option<f64>,
    /// Probe amplitude α. When present, the sender overlap is the prepared
    /// s = e^(−2α²) rather than being inferred from data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Pulse repetition rate, tagged `hz`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulse_rate: Option<Tagged>,
    /// Pulses per batch (per grid point for sweeps).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pulses: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Sweep grid: modulation amplitudes for `sweep`, calibration amplitudes
    /// for `sweep-phase`. Absent = the default grid of either command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    /// Solver tolerances and truncation schedule; partial blocks are merged
    /// with the defaults.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a config file, returning the parsed document together with its
    /// raw text (the byte-exact echo embedded in reports).
    pub fn load(path: &Path) -> EntResult<(RunConfig, String)> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| EntError::invalid(format!("config {}: {e}", path.display())))?;
        Ok((cfg, text))
    }

    /// Field-wise override: any value present in `over` replaces this one's.
    pub fn merged(mut self, over: RunConfig) -> RunConfig {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f; } )* };
        }
        take!(
            preset,
            transmission,
            excess_noise,
            calibration_amplitude,
            alpha,
            pulse_rate,
            pulses,
            seed,
            grid,
            solver,
            out_dir
        );
        self
    }
}

/// A fully resolved run: presets applied, units checked, solver validated,
/// defaults filled. `transmission` and `alpha` stay optional because some
/// commands can recover them elsewhere (sidecar metadata, data inference).
#[derive(Debug, Clone)]
pub struct Resolved {
    pub transmission: Option<f64>,
    pub excess_noise: f64,
    pub calibration_amplitude: Option<f64>,
    /// Explicitly configured probe amplitude (flag or config file).
    pub alpha: Option<f64>,
    /// Preset fallback for commands that need *some* probe amplitude.
    pub preset_alpha: Option<f64>,
    pub pulse_rate: f64,
    pub pulses: u64,
    pub seed: u64,
    pub grid: Option<Vec<f64>>,
    pub solver: SolverConfig,
    pub out_dir: PathBuf,
    /// Byte-exact copy of the input config file, or the canonical
    /// serialization of the flag-assembled config when no file was given.
    pub echo: String,
    /// The merged config document embedded in reports.
    pub merged: RunConfig,
}

impl Resolved {
    /// The channel, requiring that a transmission was configured.
    pub fn channel(&self) -> EntResult<ChannelModel> {
        let t = self.transmission.ok_or_else(|| {
            EntError::invalid(
                "transmission unknown: give --preset, --transmission, or a config value",
            )
        })?;
        ChannelModel::new(t, self.excess_noise, self.calibration_amplitude)
    }

    /// The probe amplitude, falling back to the preset's working point.
    pub fn probe_alpha(&self) -> EntResult<f64> {
        self.alpha.or(self.preset_alpha).ok_or_else(|| {
            EntError::invalid("probe amplitude unknown: give --alpha or --preset")
        })
    }
}

/// Merges an optional config file with flag values and resolves everything:
/// `--tol` sets τ_obj (with τ_feas following as τ_obj/10) and `--dim` pins
/// the truncation start, both on top of whatever solver block was configured.
pub fn resolve(
    file: Option<(RunConfig, String)>,
    flags: RunConfig,
    tol: Option<f64>,
    dim: Option<usize>,
) -> EntResult<Resolved> {
    let (base, file_text) = match file {
        Some((cfg, text)) => (cfg, Some(text)),
        None => (RunConfig::default(), None),
    };
    let merged = base.merged(flags);

    let preset = match merged.preset.as_deref() {
        Some(name) => Some(*find_preset(name)?),
        None => None,
    };
    let transmission = merged.transmission.or(preset.map(|p| p.transmission));
    let excess_noise = match &merged.excess_noise {
        Some(t) => t.expect(Unit::Snl, "excess_noise")?,
        None => preset.map(|p| p.excess_noise_snl).unwrap_or(0.0),
    };
    let pulse_rate = match &merged.pulse_rate {
        Some(t) => t.expect(Unit::Hz, "pulse_rate")?,
        None => DEFAULT_PULSE_RATE,
    };

    let mut solver = merged.solver.clone().unwrap_or_default();
    if let Some(t) = tol {
        if !(t > 0.0 && t.is_finite()) {
            return Err(EntError::invalid(format!(
                "--tol must be positive and finite, got {t}"
            )));
        }
        solver.tol_obj = t;
        solver.tol_feas = t / 10.0;
    }
    if let Some(d) = dim {
        solver.dim_start = Some(d);
        if d > solver.dim_max {
            solver.dim_max = d;
        }
    }
    solver.validate()?;

    let out_dir = merged
        .out_dir
        .clone()
        .or_else(|| std::env::var_os("ENTBENCH_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    // The embedded config reflects the run as executed (solver overrides
    // applied); the echo stays byte-identical to the input file when one was
    // given.
    let mut embedded = merged.clone();
    embedded.solver = Some(solver.clone());
    let echo = match file_text {
        Some(text) => text,
        None => {
            let mut text = serde_json::to_string_pretty(&embedded)?;
            text.push('\n');
            text
        }
    };

    Ok(Resolved {
        transmission,
        excess_noise,
        calibration_amplitude: merged.calibration_amplitude,
        alpha: merged.alpha,
        preset_alpha: preset.map(|p| p.default_alpha),
        pulse_rate,
        pulses: merged.pulses.unwrap_or(DEFAULT_PULSES),
        seed: merged.seed.unwrap_or(DEFAULT_SEED),
        grid: merged.grid.clone(),
        solver,
        out_dir,
        echo,
        merged: embedded,
    })
}
