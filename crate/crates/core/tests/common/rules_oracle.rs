//! Out-of-pipeline oracle: reads the rule file as plain TOML and evaluates it
//! with its own matching code.

use portvm_core::validation::CorpusItem;
use regex::Regex;

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '.' && c != '-').to_lowercase()).collect()
}

fn blocklist(tokens: &[String], text: &str) -> bool {
    let w = words(text).iter().map(|w| w.trim_end_matches('.').to_string()).collect::<Vec<_>>();
    tokens.iter().any(|t| {
        let tw: Vec<String> = t.to_lowercase().split_whitespace().map(String::from).collect();
        w.windows(tw.len()).any(|win| win == tw.as_slice())
    })
}

fn range(field: &str, unit: &str, min: f64, max: f64, text: &str) -> bool {
    let w = words(text);
    (0..w.len()).any(|i| {
        if w[i].trim_end_matches(':') != field {
            return false;
        }
        let Some(next) = w.get(i + 1) else { return false };
        let next = next.trim_end_matches('.');
        let (num, rest) = match next.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-')) {
            Some(k) => (&next[..k], &next[k..]),
            None => (next, ""),
        };
        let Ok(v) = num.parse::<f64>() else { return false };
        let got_unit = if rest.is_empty() { w.get(i + 2).map(|s| s.trim_end_matches('.')).unwrap_or("") } else { rest };
        (unit.is_empty() || got_unit == unit) && (v < min || v > max)
    })
}

fn unsupported_reference(sources: &[String], text: &str) -> bool {
    text.match_indices("[ref:").any(|(i, _)| {
        let rest = &text[i + 5..];
        let id = &rest[..rest.find(']').unwrap_or(rest.len())];
        !sources.iter().any(|s| s == id)
    })
}

pub fn hits(rules: &toml::Value, item: &CorpusItem) -> Vec<String> {
    let mut cats = Vec::new();
    for v in rules["validator"].as_array().unwrap() {
        let hit = match v["kind"].as_str().unwrap() {
            "blocklist" => {
                let t: Vec<String> = v["tokens"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()).collect();
                blocklist(&t, &item.text)
            }
            "pattern" => v["patterns"].as_array().unwrap().iter().any(|p| Regex::new(p["regex"].as_str().unwrap()).unwrap().is_match(&item.text)),
            "range" => v["ranges"].as_array().unwrap().iter().any(|r| {
                let num = |k: &str| r[k].as_float().or(r[k].as_integer().map(|i| i as f64)).unwrap();
                range(r["field"].as_str().unwrap(), r.get("unit").and_then(|u| u.as_str()).unwrap_or(""), num("min"), num("max"), &item.text)
            }),
            "consistency" => unsupported_reference(&item.sources, &item.text),
            k => panic!("unknown kind {k}"),
        };
        if hit {
            cats.push(v["category"].as_str().unwrap().to_string());
        }
    }
    cats
}
