//! Built-in experiment configs.

use crate::config::ExperimentConfig;
use crate::error::{Result, SimError};

pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub source: &'static str,
}

pub const PRESETS: [Preset; 5] = [
    Preset {
        name: "blowup",
        summary: "PoT vs PPoT on nine slow workers and one fast one",
        source: include_str!("../presets/blowup.toml"),
    },
    Preset {
        name: "ll-pathology",
        summary: "least-loaded vs shortest-queue with one fast worker",
        source: include_str!("../presets/ll-pathology.toml"),
    },
    Preset {
        name: "tail-loglog",
        summary: "queue tails and max-queue growth on homogeneous clusters",
        source: include_str!("../presets/tail-loglog.toml"),
    },
    Preset {
        name: "shock-recovery",
        summary: "learned policies under periodic speed permutations",
        source: include_str!("../presets/shock-recovery.toml"),
    },
    Preset {
        name: "window-ablation",
        summary: "learner window size sweep on a static cluster",
        source: include_str!("../presets/window-ablation.toml"),
    },
];

pub fn find(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<_> = PRESETS.iter().map(|p| p.name).collect();
        SimError::config(format!(
            "unknown preset `{name}` (known: {})",
            known.join(", ")
        ))
    })
}

pub fn load(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_toml(find(name)?.source)
}
