//! Binary policy checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "SCPOCKPT"
//! version      u32      1
//! header_len   u32      byte length of the JSON header
//! header       JSON     {"spec": NetSpec, "epoch": u64|null, "config": any|null}
//! count        u64      number of parameters d
//! params       d x f64  raw IEEE-754 bits
//! ```
//!
//! Parameters are stored bit-for-bit so reloading is exact.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScpoError};
use crate::net::{NetSpec, PolicyNet};
use crate::params::ParamVector;

const MAGIC: &[u8; 8] = b"SCPOCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub spec: NetSpec,
    #[serde(default)]
    pub epoch: Option<u64>,
    /// Echo of the configuration that produced the checkpoint.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn from_net(net: &PolicyNet, epoch: Option<u64>, config: Option<serde_json::Value>) -> Self {
        Self {
            header: CheckpointHeader {
                spec: net.spec().clone(),
                epoch,
                config,
            },
            params: net.params().clone(),
        }
    }

    pub fn into_net(self) -> Result<PolicyNet> {
        PolicyNet::from_params(self.header.spec, self.params)
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = serde_json::to_vec(&self.header)?;
        let header_len = u32::try_from(header.len())
            .map_err(|_| ScpoError::Checkpoint("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&header_len.to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.params.len() * 8);
        for v in self.params.as_slice() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(ScpoError::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(ScpoError::Checkpoint(format!("unsupported version {version}")));
        }
        r.read_exact(&mut word)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count)?;
        let count = u64::from_le_bytes(count) as usize;
        if count != header.spec.param_count() {
            return Err(ScpoError::Checkpoint(format!(
                "parameter count {count} does not match spec ({})",
                header.spec.param_count()
            )));
        }
        let mut raw = vec![0u8; count * 8];
        r.read_exact(&mut raw)?;
        let params = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            header,
            params: ParamVector::new(params),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
