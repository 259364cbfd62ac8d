use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerRecord, LocalModel};
use crate::protocol::{Coordinator, Head, Participant, ProtocolKind, VFLSystem};

pub const SYSTEM_CHECKPOINT_VERSION: u32 = 1;

/// JSON form of a whole system: per-participant layer lists, the partition,
/// protocol kind, class count and either the aggregation head or top layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCheckpoint {
    pub version: u32,
    pub protocol: ProtocolKind,
    pub classes: usize,
    pub partition: Vec<Vec<usize>>,
    pub participants: Vec<Vec<LayerRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Head>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top: Option<Vec<LayerRecord>>,
}

impl SystemCheckpoint {
    pub fn from_system(system: &VFLSystem) -> Self {
        let (head, top) = match &system.coordinator {
            Coordinator::Aggregate(h) => (Some(*h), None),
            Coordinator::Top(t) => (None, Some(t.to_records())),
        };
        Self {
            version: SYSTEM_CHECKPOINT_VERSION,
            protocol: system.protocol,
            classes: system.classes,
            partition: system
                .participants
                .iter()
                .map(|p| p.columns.clone())
                .collect(),
            participants: system
                .participants
                .iter()
                .map(|p| p.model.to_records())
                .collect(),
            head,
            top,
        }
    }

    pub fn to_system(&self) -> Result<VFLSystem> {
        if self.version != SYSTEM_CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        if self.partition.len() != self.participants.len() {
            return Err(Error::invalid(
                "partition and participant lists differ in length",
            ));
        }
        let participants = self
            .partition
            .iter()
            .zip(&self.participants)
            .enumerate()
            .map(|(i, (cols, layers))| {
                Participant::new(i, cols.clone(), LocalModel::from_records(layers)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let coordinator = match (&self.head, &self.top) {
            (Some(h), None) => Coordinator::Aggregate(*h),
            (None, Some(t)) => Coordinator::Top(LocalModel::from_records(t)?),
            _ => {
                return Err(Error::invalid(
                    "checkpoint needs exactly one of head and top",
                ))
            }
        };
        VFLSystem::new(self.protocol, participants, coordinator, self.classes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}
