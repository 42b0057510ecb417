//! Configurations compiled into the binary.

use crate::config::{Config, SchemaError};

pub struct Bundled {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(Bundled { name: $name, text: include_str!(concat!("../configs/", $name, ".json")) }),*]
    };
}

pub const BUNDLED: &[Bundled] = bundled!(
    "fig2-left",
    "fig2-left-large-n",
    "fig3-left",
    "k-mixture-span",
    "fig4-left",
    "fig4-right",
    "fig6-left",
    "fig6-left-printed",
    "fig6-right",
    "fig8",
    "fig9",
    "threshold-table",
    "acceptance",
);

pub fn find(name: &str) -> Option<&'static Bundled> {
    BUNDLED.iter().find(|b| b.name == name)
}

impl Bundled {
    pub fn config(&self) -> Result<Config, SchemaError> {
        Config::parse(self.text)
    }
}

/// One line per bundled configuration: name, anchor and description.
pub fn listing() -> Vec<String> {
    BUNDLED
        .iter()
        .map(|b| {
            let cfg = b.config().expect("bundled configs are valid");
            format!(
                "{:<20} [{}] {}",
                b.name,
                cfg.anchor.unwrap_or_default(),
                cfg.description.unwrap_or_default()
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_configs_parse_and_carry_anchors() {
        assert!(BUNDLED.len() >= 10);
        for b in BUNDLED {
            let cfg = b.config().unwrap_or_else(|e| panic!("{}: {e}", b.name));
            assert!(cfg.anchor.as_deref().is_some_and(|a| !a.is_empty()), "{}", b.name);
        }
        assert!(find("threshold-table").is_some());
    }
}
