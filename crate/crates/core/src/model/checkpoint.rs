//! Checkpoint file: a `key = value` text header ended by a blank line, then
//! every parameter as a little-endian `f64` in the order theta, bias, kernels,
//! allocator.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{ChannelStrategy, CmosConfig, CmosParams, PeriodicityInjection};
use crate::error::{CmosError, Result};

const MAGIC: &str = "CMOS-CHECKPOINT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CmosConfig,
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: f64,
    pub params: CmosParams,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let (pi_period, pi_inclusive) = match &c.injection {
            Some(pi) => (pi.period.to_string(), pi.inclusive),
            None => ("none".to_string(), false),
        };
        let header = format!(
            "{MAGIC}\n\
             format_version = {FORMAT_VERSION}\n\
             lookback = {}\n\
             horizon = {}\n\
             chunk_size = {}\n\
             experts = {}\n\
             kernel_size = {}\n\
             channels = {}\n\
             eps = {:?}\n\
             strategy = {}\n\
             pi_period = {pi_period}\n\
             pi_inclusive = {pi_inclusive}\n\
             seed = {}\n\
             epoch = {}\n\
             val_loss = {:?}\n\
             param_count = {}\n\n",
            c.lookback,
            c.horizon,
            c.chunk_size,
            c.experts,
            c.kernel_size,
            c.channels,
            c.eps,
            c.strategy.as_str(),
            self.seed,
            self.epoch,
            self.val_loss,
            self.params.len(),
        );
        let mut out = header.into_bytes();
        out.reserve(self.params.len() * 8);
        for v in self.params.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| CmosError::Checkpoint(m);
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("missing blank line after header".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not UTF-8".into()))?;
        let body = &bytes[split + 2..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing magic line".into()));
        }
        let mut kv = HashMap::new();
        for line in lines {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("malformed header line '{line}'")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing header key '{k}'")));
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| CmosError::Checkpoint(format!("bad value for '{key}': {v}")))
        }
        let version: u32 = parse("format_version", get("format_version")?)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let strategy = match get("strategy")?.as_str() {
            "correlation_mixing" => ChannelStrategy::CorrelationMixing,
            "private_line" => ChannelStrategy::PrivateLine,
            s => return Err(bad(format!("unknown strategy '{s}'"))),
        };
        let injection = match get("pi_period")?.as_str() {
            "none" => None,
            p => Some(PeriodicityInjection {
                period: parse("pi_period", p)?,
                inclusive: parse("pi_inclusive", get("pi_inclusive")?)?,
            }),
        };
        let config = CmosConfig {
            lookback: parse("lookback", get("lookback")?)?,
            horizon: parse("horizon", get("horizon")?)?,
            chunk_size: parse("chunk_size", get("chunk_size")?)?,
            experts: parse("experts", get("experts")?)?,
            kernel_size: parse("kernel_size", get("kernel_size")?)?,
            channels: parse("channels", get("channels")?)?,
            eps: parse("eps", get("eps")?)?,
            injection,
            strategy,
        };
        config.validate()?;
        let mut params = CmosParams::zeros(&config);
        let count: usize = parse("param_count", get("param_count")?)?;
        if count != params.len() || body.len() != count * 8 {
            return Err(bad(format!(
                "expected {} parameters, header says {count}, body holds {} bytes",
                params.len(),
                body.len()
            )));
        }
        let flat: Vec<f64> = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params.set_flat(&flat)?;
        Ok(Self {
            config,
            seed: parse("seed", get("seed")?)?,
            epoch: parse("epoch", get("epoch")?)?,
            val_loss: parse("val_loss", get("val_loss")?)?,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CmosError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CmosError::FileNotFound(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| CmosError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
