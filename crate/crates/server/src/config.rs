//! Service configuration, read from TOML.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub embeddings: PathBuf,
    /// `binary` or `jsonl`; guessed from the extension when absent.
    #[serde(default)]
    pub embeddings_format: Option<String>,
    /// Backend locator (`http://…`, `mock`, `mock:<file>`). Falls back to the
    /// backend URL environment variable.
    #[serde(default)]
    pub backend: Option<String>,
    /// Directory of built UI assets served at `/`.
    #[serde(default)]
    pub static_dir: Option<PathBuf>,
    #[serde(default)]
    pub media: MediaConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub suggest: SuggestConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaConfig {
    /// Directory holding `<id>.<ext>` image files.
    pub root: Option<PathBuf>,
    /// Redirect target with `{id}` substituted, used when `root` is unset.
    pub url_template: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity: usize,
    pub ttl_secs: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity: 256,
            ttl_secs: 15 * 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuggestConfig {
    pub max_k: usize,
    pub groupcap_images: usize,
    pub max_tokens: usize,
    pub prompt_template: Option<PathBuf>,
    pub prompt_examples: Option<PathBuf>,
}

impl Default for SuggestConfig {
    fn default() -> Self {
        Self {
            max_k: 1000,
            groupcap_images: croqs_core::prototype::DEFAULT_GROUPCAP_IMAGES,
            max_tokens: croqs_core::orchestrator::DEFAULT_MAX_TOKENS,
            prompt_template: None,
            prompt_examples: None,
        }
    }
}

fn default_listen() -> SocketAddr {
    "127.0.0.1:8080".parse().expect("literal address")
}

impl ServerConfig {
    pub fn new(embeddings: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            embeddings: embeddings.into(),
            embeddings_format: None,
            backend: None,
            static_dir: None,
            media: MediaConfig::default(),
            cache: CacheConfig::default(),
            suggest: SuggestConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Loads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.check()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.embeddings);
        self.static_dir.as_mut().map(fix);
        self.media.root.as_mut().map(fix);
        self.suggest.prompt_template.as_mut().map(fix);
        self.suggest.prompt_examples.as_mut().map(fix);
        if let Some(b) = self.backend.as_mut() {
            if let Some(rest) = b.strip_prefix("mock:") {
                let p = Path::new(rest);
                if !rest.is_empty() && !rest.starts_with("//") && p.is_relative() {
                    *b = format!("mock:{}", base.join(p).display());
                }
            }
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.cache.capacity == 0 {
            return Err(ConfigError::Invalid(
                "cache.capacity must be positive".into(),
            ));
        }
        if self.suggest.max_k == 0 {
            return Err(ConfigError::Invalid(
                "suggest.max_k must be positive".into(),
            ));
        }
        if let Some(t) = &self.media.url_template {
            if !t.contains("{id}") {
                return Err(ConfigError::Invalid(
                    "media.url_template must contain `{id}`".into(),
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("croqs.toml");
        std::fs::write(
            &path,
            "embeddings = \"store.bin\"\nbackend = \"mock:mock.json\"\n[media]\nroot = \"img\"\n",
        )
        .unwrap();
        let cfg = ServerConfig::load(&path).unwrap();
        assert_eq!(cfg.embeddings, dir.path().join("store.bin"));
        assert_eq!(cfg.media.root, Some(dir.path().join("img")));
        assert_eq!(
            cfg.backend,
            Some(format!("mock:{}", dir.path().join("mock.json").display()))
        );
        assert_eq!(
            cfg.cache,
            CacheConfig {
                capacity: 256,
                ttl_secs: 900
            }
        );
        assert_eq!(cfg.listen.port(), 8080);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_templates() {
        assert!(ServerConfig::from_toml_str("embeddings = \"x\"\ncolour = 1\n").is_err());
        let mut cfg = ServerConfig::new("x");
        cfg.media.url_template = Some("https://example.org/img".into());
        assert!(cfg.check().is_err());
    }
}
