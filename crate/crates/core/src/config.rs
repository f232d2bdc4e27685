//! System configuration shared by every component.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::fixed::Fixed;

/// Parameters governing the fleet, the tag window, and all timeouts.
///
/// Durations are logical milliseconds. `n`, `m`, and `k` are required in a
/// config file; the remaining fields default as documented on each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Count of variant pools.
    pub n: u32,
    /// Replicas per pool.
    pub m: u32,
    /// Mean replicas refreshed per admitted request; may be fractional.
    pub k: Fixed,
    /// Simulated offline window of one refresh, in ms. Default 1000.
    #[serde(default = "default_refresh_duration")]
    pub refresh_duration: u64,
    /// How long the verifier holds an incomplete vote queue, in ms. Default 5000.
    #[serde(default = "default_queue_timeout")]
    pub queue_timeout: u64,
    /// Max time a marked replica may keep draining in-flight requests, in ms.
    /// Default 10000.
    #[serde(default = "default_deferred_timeout")]
    pub deferred_timeout: u64,
    /// Width of the valid request-id window. Default 2^20.
    #[serde(default = "default_tag_window")]
    pub tag_window: u32,
}

fn default_refresh_duration() -> u64 {
    1_000
}

fn default_queue_timeout() -> u64 {
    5_000
}

fn default_deferred_timeout() -> u64 {
    10_000
}

fn default_tag_window() -> u32 {
    1 << 20
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("n must be at least 1")]
    ZeroPools,
    #[error("m must be at least 1")]
    ZeroReplicas,
    #[error("n must not exceed {max}, got {got}")]
    TooManyPools { got: u32, max: u32 },
    #[error("m must not exceed {max}, got {got}")]
    TooManyReplicas { got: u32, max: u32 },
    #[error("{field} must be positive")]
    ZeroDuration { field: &'static str },
    #[error("tag_window must be at least 1")]
    ZeroWindow,
}

/// Replica addresses embed the pool in one octet and the replica index in
/// two, so the fleet dimensions must fit those fields.
pub const MAX_POOLS: u32 = 255;
pub const MAX_REPLICAS_PER_POOL: u32 = 65_535;

impl SystemConfig {
    pub fn new(n: u32, m: u32, k: Fixed) -> SystemConfig {
        SystemConfig {
            n,
            m,
            k,
            refresh_duration: default_refresh_duration(),
            queue_timeout: default_queue_timeout(),
            deferred_timeout: default_deferred_timeout(),
            tag_window: default_tag_window(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::ZeroPools);
        }
        if self.m == 0 {
            return Err(ConfigError::ZeroReplicas);
        }
        if self.n > MAX_POOLS {
            return Err(ConfigError::TooManyPools {
                got: self.n,
                max: MAX_POOLS,
            });
        }
        if self.m > MAX_REPLICAS_PER_POOL {
            return Err(ConfigError::TooManyReplicas {
                got: self.m,
                max: MAX_REPLICAS_PER_POOL,
            });
        }
        for (field, value) in [
            ("refresh_duration", self.refresh_duration),
            ("queue_timeout", self.queue_timeout),
            ("deferred_timeout", self.deferred_timeout),
        ] {
            if value == 0 {
                return Err(ConfigError::ZeroDuration { field });
            }
        }
        if self.tag_window == 0 {
            return Err(ConfigError::ZeroWindow);
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<SystemConfig, ConfigError> {
        let config: SystemConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<SystemConfig, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_file() {
        let cfg = SystemConfig::from_toml_str(
            "n = 2\nm = 3\nk = 0.5\nrefresh_duration = 1000\n\
             queue_timeout = 5000\ndeferred_timeout = 10000\ntag_window = 1048576\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 2);
        assert_eq!(cfg.m, 3);
        assert_eq!(cfg.k, Fixed::try_from_f64(0.5).unwrap());
    }

    #[test]
    fn missing_optionals_take_defaults() {
        let cfg = SystemConfig::from_toml_str("n = 1\nm = 1\nk = 0\n").unwrap();
        assert_eq!(cfg.refresh_duration, 1_000);
        assert_eq!(cfg.queue_timeout, 5_000);
        assert_eq!(cfg.deferred_timeout, 10_000);
        assert_eq!(cfg.tag_window, 1 << 20);
    }

    #[test]
    fn integer_k_is_accepted() {
        let cfg = SystemConfig::from_toml_str("n = 4\nm = 25\nk = 2\n").unwrap();
        assert_eq!(cfg.k, Fixed::from_int(2));
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = SystemConfig::from_toml_str("n = 1\nm = 1\nk = 0\nbogus = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn zero_dimensions_are_rejected() {
        assert!(matches!(
            SystemConfig::from_toml_str("n = 1\nm = 0\nk = 0\n"),
            Err(ConfigError::ZeroReplicas)
        ));
        assert!(matches!(
            SystemConfig::from_toml_str("n = 0\nm = 1\nk = 0\n"),
            Err(ConfigError::ZeroPools)
        ));
    }

    #[test]
    fn zero_durations_are_rejected() {
        let err = SystemConfig::from_toml_str("n = 1\nm = 1\nk = 0\nqueue_timeout = 0\n");
        assert!(matches!(err, Err(ConfigError::ZeroDuration { field: "queue_timeout" })));
    }

    #[test]
    fn negative_k_is_rejected() {
        assert!(SystemConfig::from_toml_str("n = 1\nm = 1\nk = -0.5\n").is_err());
    }
}
