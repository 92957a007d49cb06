//! Architecture constants consumed by the cost model and the simulator.
//!
//! The latency constants of the built-in profiles (departure delay, base
//! memory latency, shared-memory latency, arithmetic/control cycles) are
//! fitted per GPU generation; clock, SM count, and bandwidth defaults come
//! from the public data sheets of one representative card per generation and
//! are meant to be overridden when modeling a different part.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    /// Streaming multiprocessor count.
    pub n_sm: u32,
    /// Theoretical peak memory bandwidth, bytes/s.
    pub mem_bw: f64,
    /// Core clock, Hz.
    pub freq: f64,
    /// Departure delay between memory transactions, cycles.
    pub delta: f64,
    /// Base global-memory latency, cycles.
    pub mem_baselat: f64,
    /// Shared-memory latency, cycles.
    pub shmem_lat: f64,
    /// Arithmetic and control cycles per iteration.
    pub cycles_ac: f64,
    /// Shared memory available to one thread block, bytes.
    pub shmem_capacity: u64,
    pub bank_count: u32,
    /// Bank word width, bytes.
    pub bank_width: u32,
    /// Global-memory transaction size, bytes.
    pub tran_size: u32,
    /// L2 store cache-line size, bytes.
    pub l2_line: u32,
    /// Combined L1/L2 hit fraction assumed by the model.
    pub cache_hit: f64,
    pub max_warps_per_sm: u32,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_sm", self.n_sm as f64),
            ("mem_bw", self.mem_bw),
            ("freq", self.freq),
            ("delta", self.delta),
            ("mem_baselat", self.mem_baselat),
            ("shmem_lat", self.shmem_lat),
            ("cycles_ac", self.cycles_ac),
            ("shmem_capacity", self.shmem_capacity as f64),
            ("bank_count", self.bank_count as f64),
            ("bank_width", self.bank_width as f64),
            ("tran_size", self.tran_size as f64),
            ("l2_line", self.l2_line as f64),
            ("max_warps_per_sm", self.max_warps_per_sm as f64),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidProfile(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.cache_hit) {
            return Err(Error::InvalidProfile(format!(
                "cache_hit must be in [0,1], got {}",
                self.cache_hit
            )));
        }
        if self.tran_size % self.l2_line != 0 {
            return Err(Error::InvalidProfile(
                "tran_size must be a multiple of l2_line".into(),
            ));
        }
        Ok(())
    }

    /// Shared-memory capacity in elements of the given size.
    pub fn shmem_capacity_elems(&self, elem_bytes: u64) -> u64 {
        self.shmem_capacity / elem_bytes
    }

    fn base(name: &str, n_sm: u32, mem_bw: f64, freq: f64) -> DeviceProfile {
        DeviceProfile {
            name: name.to_string(),
            n_sm,
            mem_bw,
            freq,
            delta: 0.0,
            mem_baselat: 0.0,
            shmem_lat: 0.0,
            cycles_ac: 0.0,
            shmem_capacity: 48 * 1024,
            bank_count: 32,
            bank_width: 4,
            tran_size: 128,
            l2_line: 32,
            cache_hit: 0.2,
            max_warps_per_sm: 64,
        }
    }

    pub fn kepler_k20x() -> DeviceProfile {
        let mut p = Self::base("kepler-k20x", 14, 250e9, 732e6);
        p.delta = 14.0;
        p.mem_baselat = 358.0;
        p.shmem_lat = 11.0;
        p.cycles_ac = 50.0;
        p
    }

    pub fn maxwell_m40() -> DeviceProfile {
        let mut p = Self::base("maxwell-m40", 24, 288e9, 1114e6);
        p.delta = 2.5;
        p.mem_baselat = 385.0;
        p.shmem_lat = 1.0;
        p.cycles_ac = 220.0;
        p
    }

    pub fn pascal_p100() -> DeviceProfile {
        let mut p = Self::base("pascal-p100", 56, 732e9, 1480e6);
        p.delta = 2.8;
        p.mem_baselat = 485.0;
        p.shmem_lat = 1.0;
        p.cycles_ac = 260.0;
        p
    }

    pub fn builtin(name: &str) -> Option<DeviceProfile> {
        match name {
            "kepler-k20x" => Some(Self::kepler_k20x()),
            "maxwell-m40" => Some(Self::maxwell_m40()),
            "pascal-p100" => Some(Self::pascal_p100()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["kepler-k20x", "maxwell-m40", "pascal-p100"]
    }

    /// Loads a profile from a JSON file or a `key = value` text file
    /// (one field per line, `#` comments allowed).
    pub fn load(path: &Path) -> Result<DeviceProfile> {
        let text = std::fs::read_to_string(path)?;
        let profile = if text.trim_start().starts_with('{') {
            serde_json::from_str::<DeviceProfile>(&text)
                .map_err(|e| Error::InvalidProfile(format!("{}: {e}", path.display())))?
        } else {
            Self::parse_kv(&text)
                .map_err(|e| Error::InvalidProfile(format!("{}: {e}", path.display())))?
        };
        profile.validate()?;
        Ok(profile)
    }

    fn parse_kv(text: &str) -> std::result::Result<DeviceProfile, String> {
        // Start from a named builtin if `base` is given, otherwise from a
        // fully-defaulted skeleton that every numeric line then overwrites.
        let mut p = DeviceProfile::base("custom", 1, 1.0, 1.0);
        p.delta = 1.0;
        p.mem_baselat = 1.0;
        p.shmem_lat = 1.0;
        p.cycles_ac = 1.0;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            let key = key.trim();
            let value = value.trim();
            let parse_f64 =
                || value.parse::<f64>().map_err(|e| format!("line {}: {e}", lineno + 1));
            let parse_u64 =
                || value.parse::<u64>().map_err(|e| format!("line {}: {e}", lineno + 1));
            match key {
                "base" => {
                    p = DeviceProfile::builtin(value)
                        .ok_or_else(|| format!("line {}: unknown base {value}", lineno + 1))?;
                }
                "name" => p.name = value.to_string(),
                "n_sm" => p.n_sm = parse_u64()? as u32,
                "mem_bw" => p.mem_bw = parse_f64()?,
                "freq" => p.freq = parse_f64()?,
                "delta" => p.delta = parse_f64()?,
                "mem_baselat" => p.mem_baselat = parse_f64()?,
                "shmem_lat" => p.shmem_lat = parse_f64()?,
                "cycles_ac" => p.cycles_ac = parse_f64()?,
                "shmem_capacity" => p.shmem_capacity = parse_u64()?,
                "bank_count" => p.bank_count = parse_u64()? as u32,
                "bank_width" => p.bank_width = parse_u64()? as u32,
                "tran_size" => p.tran_size = parse_u64()? as u32,
                "l2_line" => p.l2_line = parse_u64()? as u32,
                "cache_hit" => p.cache_hit = parse_f64()?,
                "max_warps_per_sm" => p.max_warps_per_sm = parse_u64()? as u32,
                other => return Err(format!("line {}: unknown key {other}", lineno + 1)),
            }
        }
        Ok(p)
    }
}
