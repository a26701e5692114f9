use std::path::Path;
use std::time::Duration;

use regex::{Regex, RegexBuilder};
use serde::Deserialize;

use super::{Category, ChunkContext, ValidationError, Validator, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Flag,
    Block,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    #[serde(rename = "validator", default)]
    validators: Vec<RuleSpec>,
}

#[derive(Debug, Deserialize)]
struct RuleSpec {
    name: String,
    category: Category,
    action: Action,
    /// Simulated model latency per chunk.
    #[serde(default)]
    cost_ms: f64,
    #[serde(flatten)]
    kind: KindSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum KindSpec {
    Blocklist { tokens: Vec<String> },
    Pattern { patterns: Vec<PatternSpec> },
    Range { ranges: Vec<RangeSpec> },
    Consistency { reference_pattern: String },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatternSpec {
    label: String,
    regex: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeSpec {
    field: String,
    #[serde(default)]
    unit: String,
    min: f64,
    max: f64,
}

#[derive(Debug)]
enum Rule {
    Blocklist(Regex),
    Pattern(Vec<(String, Regex)>),
    Range(Vec<(String, Regex, f64, f64)>),
    Consistency(Regex),
}

/// A validator built from a rule-file entry.
#[derive(Debug)]
pub struct RuleValidator {
    name: String,
    category: Category,
    action: Action,
    cost: Duration,
    rule: Rule,
}

fn compile(re: &str) -> Result<Regex, ValidationError> {
    Regex::new(re).map_err(|e| ValidationError::Rules(e.to_string()))
}

impl RuleValidator {
    fn from_spec(s: RuleSpec) -> Result<Self, ValidationError> {
        let rule = match s.kind {
            KindSpec::Blocklist { tokens } => {
                if tokens.is_empty() {
                    return Err(ValidationError::Rules(format!("{}: empty blocklist", s.name)));
                }
                let alt: Vec<String> = tokens.iter().map(|t| regex::escape(t)).collect();
                let re = RegexBuilder::new(&format!(r"\b(?:{})\b", alt.join("|")))
                    .case_insensitive(true)
                    .build()
                    .map_err(|e| ValidationError::Rules(e.to_string()))?;
                Rule::Blocklist(re)
            }
            KindSpec::Pattern { patterns } => {
                Rule::Pattern(patterns.into_iter().map(|p| Ok((p.label, compile(&p.regex)?))).collect::<Result<_, ValidationError>>()?)
            }
            KindSpec::Range { ranges } => Rule::Range(
                ranges
                    .into_iter()
                    .map(|r| {
                        let unit = if r.unit.is_empty() { String::new() } else { format!(r"\s*{}\b", regex::escape(&r.unit)) };
                        let re = RegexBuilder::new(&format!(r"\b{}\s*[:=]?\s*(-?\d+(?:\.\d+)?){unit}", regex::escape(&r.field)))
                            .case_insensitive(true)
                            .build()
                            .map_err(|e| ValidationError::Rules(e.to_string()))?;
                        Ok((r.field, re, r.min, r.max))
                    })
                    .collect::<Result<_, ValidationError>>()?,
            ),
            KindSpec::Consistency { reference_pattern } => {
                let re = compile(&reference_pattern)?;
                if re.captures_len() < 2 {
                    return Err(ValidationError::Rules(format!("{}: reference_pattern needs a capture group", s.name)));
                }
                Rule::Consistency(re)
            }
        };
        if !(s.cost_ms >= 0.0) {
            return Err(ValidationError::Rules(format!("{}: cost_ms must be nonnegative", s.name)));
        }
        Ok(RuleValidator {
            name: s.name,
            category: s.category,
            action: s.action,
            cost: Duration::from_secs_f64(s.cost_ms / 1e3),
            rule,
        })
    }

    /// Same rule with a different simulated cost.
    pub fn with_cost(mut self, cost: Duration) -> Self {
        self.cost = cost;
        self
    }

    pub fn action(&self) -> Action {
        self.action
    }

    fn finding(&self, chunk: &str, ctx: &ChunkContext<'_>) -> Option<String> {
        match &self.rule {
            Rule::Blocklist(re) => re.find(chunk).map(|m| format!("blocked term `{}`", m.as_str().to_lowercase())),
            Rule::Pattern(ps) => ps.iter().find(|(_, re)| re.is_match(chunk)).map(|(label, _)| format!("{label}-pattern")),
            Rule::Range(rs) => rs.iter().find_map(|(field, re, min, max)| {
                re.captures_iter(chunk).find_map(|c| {
                    let v: f64 = c[1].parse().ok()?;
                    (v < *min || v > *max).then(|| format!("{field} {v} outside [{min}, {max}]"))
                })
            }),
            Rule::Consistency(re) => re
                .captures_iter(chunk)
                .map(|c| c[1].to_string())
                .find(|id| !ctx.sources.iter().any(|s| s == id))
                .map(|id| format!("unsupported reference `{id}`")),
        }
    }
}

impl Validator for RuleValidator {
    fn name(&self) -> &str {
        &self.name
    }

    fn category(&self) -> Category {
        self.category
    }

    fn check(&self, chunk: &str, ctx: &ChunkContext<'_>) -> Verdict {
        if !self.cost.is_zero() {
            std::thread::sleep(self.cost);
        }
        match (self.finding(chunk, ctx), self.action) {
            (None, _) => Verdict::Pass,
            (Some(r), Action::Flag) => Verdict::Flag(r),
            (Some(r), Action::Block) => Verdict::Block(r),
        }
    }
}

pub fn parse_rules(text: &str) -> Result<Vec<RuleValidator>, ValidationError> {
    let f: RuleFile = toml::from_str(text).map_err(|e| ValidationError::Rules(e.to_string()))?;
    let mut names = std::collections::BTreeSet::new();
    f.validators
        .into_iter()
        .map(|s| {
            if !names.insert(s.name.clone()) {
                return Err(ValidationError::Rules(format!("duplicate validator `{}`", s.name)));
            }
            RuleValidator::from_spec(s)
        })
        .collect()
}

pub fn load_rules(path: &Path) -> Result<Vec<RuleValidator>, ValidationError> {
    parse_rules(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const RULES: &str = r#"
[[validator]]
name = "terms"
category = "harmful_content"
kind = "blocklist"
action = "block"
tokens = ["napalm", "bomb recipe"]

[[validator]]
name = "pii"
category = "privacy_leak"
kind = "pattern"
action = "flag"
patterns = [{ label = "email", regex = '[\w.+-]+@[\w-]+\.[\w.]+' }]

[[validator]]
name = "dose"
category = "range_check"
kind = "range"
action = "block"
ranges = [{ field = "ibuprofen", unit = "mg", min = 0, max = 3200 }]

[[validator]]
name = "refs"
category = "consistency_check"
kind = "consistency"
action = "flag"
reference_pattern = '\[ref:([\w-]+)\]'
"#;

    fn ctx(sources: &[String]) -> ChunkContext<'_> {
        ChunkContext { index: 0, prior: "", sources }
    }

    #[test]
    fn each_kind_of_rule() {
        let v = parse_rules(RULES).unwrap();
        let none: Vec<String> = vec![];
        let c = ctx(&none);
        assert_eq!(v[0].check("A Bomb Recipe follows", &c), Verdict::Block("blocked term `bomb recipe`".into()));
        assert_eq!(v[0].check("bombastic", &c), Verdict::Pass);
        assert_eq!(v[1].check("mail alice@example.com", &c), Verdict::Flag("email-pattern".into()));
        assert!(v[2].check("ibuprofen: 4000 mg daily", &c).is_block());
        assert!(v[2].check("ibuprofen 400 mg", &c).is_pass());
        let src = vec!["a1".to_string()];
        assert!(v[3].check("see [ref:a1]", &ctx(&src)).is_pass());
        assert_eq!(v[3].check("see [ref:b2]", &ctx(&src)), Verdict::Flag("unsupported reference `b2`".into()));
    }

    #[test]
    fn bad_rule_files() {
        assert!(parse_rules("[[validator]]\nname='x'\ncategory='privacy_leak'\nkind='pattern'\naction='flag'\npatterns=[{label='a', regex='('}]").is_err());
        assert!(parse_rules("[[validator]]\nname='x'\ncategory='nope'\nkind='blocklist'\naction='flag'\ntokens=['a']").is_err());
        assert!(parse_rules("[[validator]]\nname='x'\ncategory='consistency_check'\nkind='consistency'\naction='flag'\nreference_pattern='ref'").is_err());
    }
}
