//! Self-describing JSON checkpoints: config, seed (inside the config),
//! epoch counter and all member parameters. Floats serialize in shortest
//! round-trip form, so save/load is bit-exact and re-saving is
//! byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, EnsembleConfig};
use crate::error::{Error, Result};
use crate::net::NetworkParams;

const FORMAT: &str = "cmcl-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: EnsembleConfig,
    epoch: usize,
    members: Vec<NetworkParams>,
}

pub fn to_string(ensemble: &Ensemble) -> Result<String> {
    let checkpoint = Checkpoint {
        format: FORMAT.to_owned(),
        version: VERSION,
        config: ensemble.config.clone(),
        epoch: ensemble.epoch,
        members: ensemble.members.clone(),
    };
    serde_json::to_string_pretty(&checkpoint)
        .map_err(|e| Error::Checkpoint(format!("serialization failed: {e}")))
}

pub fn save(ensemble: &Ensemble, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(ensemble)?)?;
    Ok(())
}

pub fn from_str(text: &str) -> Result<Ensemble> {
    let checkpoint: Checkpoint =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parse failed: {e}")))?;
    if checkpoint.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unrecognized format marker {:?}",
            checkpoint.format
        )));
    }
    if checkpoint.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            checkpoint.version
        )));
    }
    for (m, params) in checkpoint.members.iter().enumerate() {
        if params.layers.is_empty() {
            return Err(Error::Checkpoint(format!("member {m} has no layers")));
        }
        if !params.is_finite() {
            return Err(Error::Checkpoint(format!(
                "member {m} contains non-finite parameters"
            )));
        }
    }
    Ensemble::from_members(checkpoint.config, checkpoint.members, checkpoint.epoch)
}

pub fn load(path: &Path) -> Result<Ensemble> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_gaussian_clusters;
    use crate::ensemble::{train, Mode};

    fn trained() -> Ensemble {
        let dataset = gen_gaussian_clusters(3, 20, 2, 0.8, 4).unwrap();
        let config = EnsembleConfig {
            members: 2,
            overlap: 1,
            mode: Mode::Cmcl,
            epochs: 2,
            batch_size: 16,
            hidden_dims: vec![6],
            seed: 5,
            ..EnsembleConfig::default()
        };
        train(&config, &dataset, None).unwrap().0
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ensemble = trained();
        let text = to_string(&ensemble).unwrap();
        let loaded = from_str(&text).unwrap();
        assert_eq!(loaded.members, ensemble.members);
        assert_eq!(loaded.config, ensemble.config);
        assert_eq!(loaded.epoch, ensemble.epoch);
        // Re-saving what was loaded is byte-identical.
        assert_eq!(to_string(&loaded).unwrap(), text);
    }

    #[test]
    fn corrupt_payloads_are_rejected() {
        assert!(matches!(from_str("not json"), Err(Error::Checkpoint(_))));
        let ensemble = trained();
        let text = to_string(&ensemble).unwrap();
        let wrong_format = text.replace(FORMAT, "something-else");
        assert!(matches!(from_str(&wrong_format), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load(Path::new("/nonexistent/checkpoint.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/checkpoint.json"));
    }
}
