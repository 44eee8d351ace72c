//! Named desk-scale experiment grid: `<attack><percent>-<split>`, e.g.
//! `sf30-iid`, `clean-dir05`, `mpaf10-dir02`. `ipmx*` is IPM with a large epsilon.

use super::config::RunConfig;
use crate::attacks::{AttackKind, AttackSchedule};
use crate::error::{FedFgError, Result};
use crate::nn::TrainConfig;

pub const DESK_ROUNDS: usize = 40;
pub const DESK_ATTACK_START: usize = 8;
/// Sign-flip amplification used by the desk-scale presets.
pub const DESK_SF_SCALE: f64 = 16.0;
pub const LARGE_IPM_EPSILON: f64 = 2.0;

pub const ATTACKS: [&str; 13] = [
    "clean", "sf10", "sf20", "sf30", "ipm10", "ipm20", "ipm30", "ipmx10", "ipmx20", "ipmx30", "mpaf10",
    "mpaf20", "mpaf30",
];
pub const SPLITS: [&str; 3] = ["iid", "dir05", "dir02"];

pub fn preset_names() -> Vec<String> {
    ATTACKS
        .iter()
        .flat_map(|a| SPLITS.iter().map(move |s| format!("{a}-{s}")))
        .collect()
}

/// Training settings shared by every preset.
pub fn desk_train() -> TrainConfig {
    TrainConfig {
        eta1: 0.2,
        eta2: 0.01,
        batch_size: 64,
        local_epochs: 10,
        flow_epochs: 10,
    }
}

pub fn preset(name: &str) -> Result<RunConfig> {
    let unknown = || FedFgError::UnknownPreset(name.to_string());
    let (attack_part, split) = name.split_once('-').ok_or_else(unknown)?;
    let beta = match split {
        "iid" => None,
        "dir05" => Some(0.5),
        "dir02" => Some(0.2),
        _ => return Err(unknown()),
    };
    let (attack, fraction) = if attack_part == "clean" {
        (AttackKind::None, 0.0)
    } else {
        let digits = attack_part.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        let kind = &attack_part[..attack_part.len() - digits.len()];
        let fraction = match digits {
            "10" => 0.1,
            "20" => 0.2,
            "30" => 0.3,
            _ => return Err(unknown()),
        };
        let attack = match kind {
            "sf" => AttackKind::Sf { scale: DESK_SF_SCALE },
            "ipm" => AttackKind::ipm(),
            "ipmx" => AttackKind::Ipm { epsilon: LARGE_IPM_EPSILON },
            "mpaf" => AttackKind::mpaf(),
            _ => return Err(unknown()),
        };
        (attack, fraction)
    };
    Ok(RunConfig {
        rounds: DESK_ROUNDS,
        beta,
        attack,
        schedule: AttackSchedule {
            start_round: DESK_ATTACK_START,
            malicious_fraction: fraction,
        },
        train: desk_train(),
        ..RunConfig::default()
    })
}
