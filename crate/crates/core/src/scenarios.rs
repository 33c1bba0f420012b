//! Candidate counterfactual scenarios: every subset of an image's tags with
//! between one and `max_length` elements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// Largest scenario size.
    pub max_length: usize,
    /// Hard cap on the number of scenarios produced per image.
    pub max_scenarios: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            max_length: 3,
            max_scenarios: 10_000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_length == 0 {
            return Err(Error::Config("scenario max length must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioStatus {
    Complete,
    Truncated,
    NoScenarios,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub scenarios: Vec<Scenario>,
    pub status: ScenarioStatus,
}

/// Enumerates scenarios ordered by size, then lexicographically.
///
/// `tags` must already be canonical and duplicate-free.
pub fn generate_scenarios(tags: &[String], config: &ScenarioConfig) -> Result<ScenarioSet> {
    config.validate()?;
    let mut sorted = tags.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invalid("scenario tags must be distinct".into()));
    }
    if sorted.is_empty() {
        return Ok(ScenarioSet {
            scenarios: Vec::new(),
            status: ScenarioStatus::NoScenarios,
        });
    }

    let n = sorted.len();
    let mut out = Vec::new();
    for k in 1..=config.max_length.min(n) {
        // Lexicographic k-combinations of indices.
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            if out.len() == config.max_scenarios {
                return Ok(ScenarioSet {
                    scenarios: out,
                    status: ScenarioStatus::Truncated,
                });
            }
            out.push(Scenario::from_sorted_unchecked(
                idx.iter().map(|&i| sorted[i].clone()).collect(),
            ));
            let Some(pos) = (0..k).rev().find(|&p| idx[p] < n - k + p) else {
                break;
            };
            idx[pos] += 1;
            for p in pos + 1..k {
                idx[p] = idx[p - 1] + 1;
            }
        }
    }
    Ok(ScenarioSet {
        scenarios: out,
        status: ScenarioStatus::Complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_tags() {
        let set = generate_scenarios(
            &tags(&["man", "woman", "romantic moment"]),
            &ScenarioConfig::default(),
        )
        .unwrap();
        let prompts: Vec<String> = set.scenarios.iter().map(|s| s.prompt()).collect();
        assert_eq!(
            prompts,
            vec![
                "man",
                "romantic moment",
                "woman",
                "man, romantic moment",
                "man, woman",
                "romantic moment, woman",
                "man, romantic moment, woman",
            ]
        );
        assert_eq!(set.status, ScenarioStatus::Complete);
    }

    #[test]
    fn four_tags_gives_fourteen() {
        let set =
            generate_scenarios(&tags(&["a", "b", "c", "d"]), &ScenarioConfig::default()).unwrap();
        assert_eq!(set.scenarios.len(), 14);
    }

    #[test]
    fn empty_tags() {
        let set = generate_scenarios(&[], &ScenarioConfig::default()).unwrap();
        assert!(set.scenarios.is_empty());
        assert_eq!(set.status, ScenarioStatus::NoScenarios);
    }

    #[test]
    fn truncation_is_flagged() {
        let cfg = ScenarioConfig {
            max_length: 3,
            max_scenarios: 5,
        };
        let set = generate_scenarios(&tags(&["a", "b", "c", "d"]), &cfg).unwrap();
        assert_eq!(set.scenarios.len(), 5);
        assert_eq!(set.status, ScenarioStatus::Truncated);
        let exact = ScenarioConfig {
            max_length: 1,
            max_scenarios: 4,
        };
        let set = generate_scenarios(&tags(&["a", "b", "c", "d"]), &exact).unwrap();
        assert_eq!(set.status, ScenarioStatus::Complete);
    }

    #[test]
    fn duplicates_and_zero_length_rejected() {
        assert!(generate_scenarios(&tags(&["a", "a"]), &ScenarioConfig::default()).is_err());
        let cfg = ScenarioConfig {
            max_length: 0,
            ..ScenarioConfig::default()
        };
        assert!(generate_scenarios(&tags(&["a"]), &cfg).is_err());
    }
}
