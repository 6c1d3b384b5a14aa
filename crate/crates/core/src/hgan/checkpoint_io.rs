//! Checkpoint files: a JSON header (configs, step, parameter layout, loss
//! summary) followed by two checksummed binary arrays - the concatenated
//! parameters and the loss history. Loading rebuilds the wiring from the
//! header and overwrites every parameter byte-for-byte, so a loaded model
//! reproduces forward outputs bitwise.

use super::{LossRecord, ModelCheckpoint, PriorConfig, TrainConfig};
use crate::dataset::binfmt::{self, Array};
use crate::dataset::{DesignKind, Normalization};
use crate::error::FormatError;
use crate::{CoreError, Result};
use duq_autodiff::ParamSet;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"DQCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupMeta {
    group: String,
    entries: Vec<EntryMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LossSummary {
    records: usize,
    final_loss_d: Option<f64>,
    final_loss_g: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: DesignKind,
    priors: PriorConfig,
    train: TrainConfig,
    step: u64,
    init_seed: u64,
    normalization: Normalization,
    groups: Vec<GroupMeta>,
    loss_summary: LossSummary,
}

fn group_meta(name: &str, params: &ParamSet) -> GroupMeta {
    GroupMeta {
        group: name.to_string(),
        entries: params
            .iter()
            .map(|(n, t)| EntryMeta {
                name: n.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    }
}

impl ModelCheckpoint {
    fn groups(&self) -> [(&'static str, &ParamSet); 3] {
        [
            ("generator", &self.gen_params),
            ("discriminator", &self.disc_params),
            ("q", &self.q_params),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format_version: VERSION,
            kind: self.kind,
            priors: self.priors,
            train: self.train_config,
            step: self.step,
            init_seed: self.init_seed,
            normalization: self.normalization.clone(),
            groups: self
                .groups()
                .iter()
                .map(|(n, p)| group_meta(n, p))
                .collect(),
            loss_summary: LossSummary {
                records: self.loss_history.len(),
                final_loss_d: self.loss_history.last().map(|r| r.loss_d),
                final_loss_g: self.loss_history.last().map(|r| r.loss_g),
            },
        };
        let header_json =
            serde_json::to_vec(&header).map_err(|e| CoreError::Manifest(e.to_string()))?;

        let mut blob = Vec::new();
        for (_, params) in self.groups() {
            for (_, t) in params.iter() {
                blob.extend_from_slice(t.data());
            }
        }
        let params_bytes = binfmt::encode(&Array::new(vec![blob.len() as u64], blob)?);

        let mut losses = Vec::with_capacity(self.loss_history.len() * 3);
        for r in &self.loss_history {
            losses.push(r.step as f64);
            losses.push(r.loss_d);
            losses.push(r.loss_g);
        }
        let loss_bytes = binfmt::encode(&Array::new(
            vec![self.loss_history.len() as u64, 3],
            losses,
        )?);

        let mut file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
        let mut write = |buf: &[u8]| -> Result<()> {
            file.write_all(buf).map_err(|e| CoreError::io(path, e))
        };
        write(&MAGIC)?;
        write(&(header_json.len() as u32).to_le_bytes())?;
        write(&header_json)?;
        write(&params_bytes)?;
        write(&loss_bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| CoreError::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| CoreError::io(path, e))?;
        if bytes.len() < 8 {
            return Err(FormatError::Truncated {
                needed: 8,
                available: bytes.len() as u64,
            }
            .into());
        }
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&bytes[..4]);
        if magic != MAGIC {
            return Err(FormatError::BadMagic {
                expected: MAGIC,
                found: magic,
            }
            .into());
        }
        let json_len = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
        if bytes.len() < 8 + json_len {
            return Err(FormatError::Truncated {
                needed: (8 + json_len) as u64,
                available: bytes.len() as u64,
            }
            .into());
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + json_len])
            .map_err(|e| CoreError::Manifest(e.to_string()))?;
        if header.format_version != VERSION {
            return Err(FormatError::Version {
                found: header.format_version as u16,
                supported: VERSION as u16,
            }
            .into());
        }

        let (params_array, consumed) = binfmt::decode_prefix(&bytes[8 + json_len..])?;
        let (loss_array, _) = binfmt::decode_prefix(&bytes[8 + json_len + consumed..])?;

        let mut ckpt = ModelCheckpoint::init(
            header.kind,
            header.priors,
            header.train,
            header.normalization.clone(),
        )?;
        // Every parameter is overwritten below, so the init wiring values do
        // not matter; init_seed is kept purely as provenance.
        ckpt.init_seed = header.init_seed;

        // Validate the layout, then overwrite parameter values in order.
        const EXPECTED_GROUPS: [&str; 3] = ["generator", "discriminator", "q"];
        if header.groups.len() != EXPECTED_GROUPS.len() {
            return Err(CoreError::Manifest(format!(
                "checkpoint has {} parameter groups, expected {}",
                header.groups.len(),
                EXPECTED_GROUPS.len()
            )));
        }
        let mut offset = 0usize;
        for (gi, meta) in header.groups.iter().enumerate() {
            let expected_name = EXPECTED_GROUPS[gi];
            let params = match gi {
                0 => &mut ckpt.gen_params,
                1 => &mut ckpt.disc_params,
                _ => &mut ckpt.q_params,
            };
            if meta.group != expected_name {
                return Err(CoreError::Manifest(format!(
                    "unexpected parameter group `{}` (wanted `{expected_name}`)",
                    meta.group
                )));
            }
            if meta.entries.len() != params.len() {
                return Err(CoreError::Manifest(format!(
                    "group `{}` has {} entries, expected {}",
                    meta.group,
                    meta.entries.len(),
                    params.len()
                )));
            }
            for (id, entry) in params.ids().collect::<Vec<_>>().into_iter().zip(&meta.entries) {
                let name_ok = params.name(id) == entry.name;
                let shape_ok = params.get(id).shape() == entry.shape.as_slice();
                if !name_ok || !shape_ok {
                    return Err(CoreError::Manifest(format!(
                        "parameter `{}` {:?} does not match checkpoint entry `{}` {:?}",
                        params.name(id),
                        params.get(id).shape(),
                        entry.name,
                        entry.shape
                    )));
                }
                let len = params.get(id).len();
                if offset + len > params_array.data.len() {
                    return Err(FormatError::Truncated {
                        needed: (offset + len) as u64,
                        available: params_array.data.len() as u64,
                    }
                    .into());
                }
                params
                    .get_mut(id)
                    .data_mut()
                    .copy_from_slice(&params_array.data[offset..offset + len]);
                offset += len;
            }
        }
        if offset != params_array.data.len() {
            return Err(CoreError::Manifest(format!(
                "parameter blob has {} values, layout consumes {offset}",
                params_array.data.len()
            )));
        }

        ckpt.step = header.step;
        ckpt.loss_history = loss_array
            .data
            .chunks_exact(3)
            .map(|c| LossRecord {
                step: c[0] as u64,
                loss_d: c[1],
                loss_g: c[2],
            })
            .collect();
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hgan::LatentSample;

    fn demo_checkpoint() -> ModelCheckpoint {
        let priors = PriorConfig {
            parent_dim: 3,
            child_dim: 2,
            noise_dim: 4,
        };
        let mut ckpt = ModelCheckpoint::init(
            DesignKind::Airfoil,
            priors,
            TrainConfig::smoke(21),
            Normalization {
                channels: vec![(0.0, 1.0), (-0.3, 0.3)],
            },
        )
        .unwrap();
        ckpt.step = 17;
        ckpt.loss_history = vec![
            LossRecord {
                step: 0,
                loss_d: 1.5,
                loss_g: 2.5,
            },
            LossRecord {
                step: 1,
                loss_d: 1.25,
                loss_g: 2.25,
            },
        ];
        ckpt
    }

    #[test]
    fn roundtrip_reproduces_forward_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = demo_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = ModelCheckpoint::load(&path).unwrap();
        assert_eq!(ckpt, loaded);

        let sample = LatentSample {
            parent: vec![0.25, 0.5, 0.75],
            child: vec![0.1, -0.1],
            noise: vec![0.02, -0.3, 0.4, 0.0],
        };
        let a = ckpt.generate_normalized(&sample).unwrap();
        let b = loaded.generate_normalized(&sample).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn corrupted_blob_is_checksum_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        demo_checkpoint().save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let at = bytes.len() - 100;
        bytes[at] ^= 0x10;
        std::fs::write(&path, bytes).unwrap();
        match ModelCheckpoint::load(&path) {
            Err(CoreError::Format(FormatError::Checksum { .. })) => {}
            other => panic!("expected checksum error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_typed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        std::fs::write(&path, b"NOPE1234").unwrap();
        assert!(matches!(
            ModelCheckpoint::load(&path),
            Err(CoreError::Format(FormatError::BadMagic { .. }))
        ));
    }
}
