//! Structured-output parsing. Model replies are free text that should
//! contain one JSON object, possibly inside a fenced block or surrounded by
//! prose; the first object matching the expected schema wins.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::model::{ConceptPair, QueryType, TrackId, Verdict, VerdictState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("reply contains no JSON object")]
    NoJson,
    #[error("no JSON object in the reply matches the {schema} schema ({detail})")]
    Schema {
        schema: &'static str,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptResponse {
    pub query_type: QueryType,
    pub pairs: Vec<ConceptPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerdictResponse {
    pub verdicts: BTreeMap<TrackId, Verdict>,
}

/// Every top-level JSON object embedded in `text`, in order.
pub fn json_objects(text: &str) -> Vec<Map<String, Value>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while let Some(off) = text[pos..].find('{') {
        let start = pos + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                out.push(map);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    out
}

fn first_matching<T>(
    text: &str,
    schema: &'static str,
    mut convert: impl FnMut(&Map<String, Value>) -> Result<T, String>,
) -> Result<T, ParseError> {
    let objects = json_objects(text);
    if objects.is_empty() {
        return Err(ParseError::NoJson);
    }
    let mut detail = String::new();
    for obj in &objects {
        match convert(obj) {
            Ok(v) => return Ok(v),
            Err(e) if detail.is_empty() => detail = e,
            Err(_) => {}
        }
    }
    Err(ParseError::Schema { schema, detail })
}

fn parse_pair(v: &Value) -> Result<ConceptPair, String> {
    let (core, broad) = match v {
        Value::Object(m) => (m.get("core"), m.get("broad")),
        Value::Array(a) if a.len() == 2 => (a.first(), a.get(1)),
        _ => {
            return Err(format!(
                "concept pair {v} is neither an object nor a 2-array"
            ))
        }
    };
    match (core.and_then(Value::as_str), broad.and_then(Value::as_str)) {
        (Some(c), Some(b)) => ConceptPair::new(c, b).map_err(|e| e.to_string()),
        _ => Err(format!("concept pair {v} lacks string core/broad")),
    }
}

/// `{"query_type": "referring"|"reasoning", "concept_pairs": [{"core", "broad"}, ...]}`
pub fn parse_concepts(text: &str) -> Result<ConceptResponse, ParseError> {
    first_matching(text, "concept", |obj| {
        let query_type = match obj
            .get("query_type")
            .and_then(Value::as_str)
            .map(str::to_ascii_lowercase)
        {
            Some(t) if t == "referring" => QueryType::Referring,
            Some(t) if t == "reasoning" => QueryType::Reasoning,
            other => return Err(format!("query_type {other:?}")),
        };
        let pairs = obj
            .get("concept_pairs")
            .and_then(Value::as_array)
            .ok_or("missing concept_pairs array")?
            .iter()
            .map(parse_pair)
            .collect::<Result<Vec<_>, _>>()?;
        if query_type == QueryType::Referring && pairs.is_empty() {
            return Err("referring query without concept pairs".into());
        }
        Ok(ConceptResponse { query_type, pairs })
    })
}

fn verdict_state(s: &str) -> Option<VerdictState> {
    match s.trim().to_ascii_lowercase().as_str() {
        "accept" | "accepted" => Some(VerdictState::Accepted),
        "reject" | "rejected" => Some(VerdictState::Rejected),
        "uncertain" => Some(VerdictState::Uncertain),
        _ => None,
    }
}

fn as_id(v: &Value) -> Option<u32> {
    match v {
        Value::Number(n) => n.as_u64().and_then(|n| u32::try_from(n).ok()),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// `{"verdicts": [{"id": int, "verdict": "accept"|"reject"|"uncertain", "reason": str}]}`
///
/// Ids missing from the reply default to uncertain; ids outside
/// `expected` are ignored.
pub fn parse_verdicts(
    text: &str,
    expected: &BTreeSet<TrackId>,
) -> Result<VerdictResponse, ParseError> {
    let parsed = first_matching(text, "verdict", |obj| {
        let list = obj
            .get("verdicts")
            .and_then(Value::as_array)
            .ok_or("missing verdicts array")?;
        let mut found = BTreeMap::new();
        for entry in list {
            let id = entry
                .get("id")
                .and_then(as_id)
                .ok_or_else(|| format!("entry {entry} has no id"))?;
            let state = entry
                .get("verdict")
                .and_then(Value::as_str)
                .and_then(verdict_state)
                .ok_or_else(|| format!("entry {entry} has no valid verdict"))?;
            let reason = entry
                .get("reason")
                .and_then(Value::as_str)
                .unwrap_or_default();
            found
                .entry(TrackId(id))
                .or_insert_with(|| Verdict::new(state, reason));
        }
        Ok(found)
    })?;
    let verdicts = expected
        .iter()
        .map(|id| {
            let v = parsed
                .get(id)
                .cloned()
                .unwrap_or_else(|| Verdict::uncertain("no verdict in reply"));
            (*id, v)
        })
        .collect();
    Ok(VerdictResponse { verdicts })
}

/// Inverse of [`parse_verdicts`].
pub fn serialize_verdicts(response: &VerdictResponse) -> String {
    let list: Vec<Value> = response
        .verdicts
        .iter()
        .map(|(id, v)| {
            let verdict = match v.state {
                VerdictState::Accepted => "accept",
                VerdictState::Rejected => "reject",
                VerdictState::Uncertain => "uncertain",
            };
            json!({"id": id.0, "verdict": verdict, "reason": v.rationale})
        })
        .collect();
    json!({ "verdicts": list }).to_string()
}

/// `{"required": bool}`
pub fn parse_required(text: &str) -> Result<bool, ParseError> {
    first_matching(text, "appearance requirement", |obj| {
        obj.get("required")
            .and_then(Value::as_bool)
            .ok_or_else(|| "missing boolean `required`".to_string())
    })
}

/// `{"<id>": "description", ...}`, optionally wrapped as
/// `{"descriptions": {...}}`.
pub fn parse_descriptions(text: &str) -> Result<BTreeMap<TrackId, String>, ParseError> {
    first_matching(text, "appearance description", |obj| {
        let map = match obj.get("descriptions") {
            Some(Value::Object(inner)) => inner,
            _ => obj,
        };
        let mut out = BTreeMap::new();
        for (k, v) in map {
            let id: u32 = k
                .trim()
                .parse()
                .map_err(|_| format!("key {k:?} is not an id"))?;
            let desc = v
                .as_str()
                .ok_or_else(|| format!("description for {k} is not a string"))?;
            out.insert(TrackId(id), desc.trim().to_string());
        }
        if out.is_empty() {
            return Err("no descriptions".into());
        }
        Ok(out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(v: &[u32]) -> BTreeSet<TrackId> {
        v.iter().map(|&i| TrackId(i)).collect()
    }

    #[test]
    fn fenced_referring_concepts() {
        let text = "Here you go:\n```json\n{\"query_type\": \"referring\", \"concept_pairs\": [{\"core\": \"person\", \"broad\": \"human\"}, {\"core\": \"couch\", \"broad\": \"furniture\"}]}\n```";
        let r = parse_concepts(text).unwrap();
        assert_eq!(r.query_type, QueryType::Referring);
        let cores: Vec<&str> = r.pairs.iter().map(|p| p.core.as_str()).collect();
        assert_eq!(cores, ["person", "couch"]);
    }

    #[test]
    fn array_pairs_and_reasoning_without_pairs() {
        let r = parse_concepts(r#"{"query_type":"reasoning","concept_pairs":[["car","vehicle"]]}"#)
            .unwrap();
        assert_eq!(r.pairs, vec![ConceptPair::new("car", "vehicle").unwrap()]);
        let r = parse_concepts(r#"{"query_type":"Reasoning","concept_pairs":[]}"#).unwrap();
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn concept_errors() {
        assert_eq!(parse_concepts("no json here"), Err(ParseError::NoJson));
        assert!(matches!(
            parse_concepts(r#"{"query_type":"referring","concept_pairs":[]}"#),
            Err(ParseError::Schema { .. })
        ));
        assert!(parse_concepts(r#"{"query_type":"maybe","concept_pairs":[]}"#).is_err());
        assert!(parse_concepts(
            r#"{"query_type":"referring","concept_pairs":[{"core":"car","broad":"car"}]}"#
        )
        .is_err());
    }

    #[test]
    fn skips_non_matching_objects() {
        let text = r#"first {"note": 1} then {"query_type":"referring","concept_pairs":[{"core":"cat","broad":"animal"}]}"#;
        assert_eq!(parse_concepts(text).unwrap().pairs.len(), 1);
    }

    #[test]
    fn verdicts_walkthrough() {
        let text = r#"{"verdicts":[{"id":2,"verdict":"reject","reason":"bicycle"},{"id":3,"verdict":"reject","reason":"bicycle"},{"id":0,"verdict":"uncertain","reason":""},{"id":1,"verdict":"uncertain","reason":""}]}"#;
        let r = parse_verdicts(text, &ids(&[0, 1, 2, 3])).unwrap();
        let count = |s| r.verdicts.values().filter(|v| v.state == s).count();
        assert_eq!(count(VerdictState::Rejected), 2);
        assert_eq!(count(VerdictState::Uncertain), 2);
        assert_eq!(r.verdicts[&TrackId(2)].rationale, "bicycle");
    }

    #[test]
    fn missing_ids_default_uncertain_and_strays_ignored() {
        let r = parse_verdicts(
            r#"{"verdicts":[{"id":0,"verdict":"accept"},{"id":99,"verdict":"reject"}]}"#,
            &ids(&[0, 1]),
        )
        .unwrap();
        assert_eq!(r.verdicts.len(), 2);
        assert_eq!(r.verdicts[&TrackId(0)].state, VerdictState::Accepted);
        assert_eq!(r.verdicts[&TrackId(1)].state, VerdictState::Uncertain);
        assert!(!r.verdicts.contains_key(&TrackId(99)));
        assert_eq!(
            parse_verdicts("nothing", &ids(&[0])),
            Err(ParseError::NoJson)
        );
    }

    #[test]
    fn required_and_descriptions() {
        assert!(parse_required("Sure: {\"required\": true}").unwrap());
        assert!(!parse_required("{\"required\": false}").unwrap());
        assert!(parse_required("{\"required\": \"yes\"}").is_err());
        let d = parse_descriptions(r#"{"0":"white car","1":"red car"}"#).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[&TrackId(1)], "red car");
        let d = parse_descriptions(r#"{"descriptions":{"4":"spotted dog"}}"#).unwrap();
        assert_eq!(d[&TrackId(4)], "spotted dog");
    }

    fn verdict_map() -> impl Strategy<Value = VerdictResponse> {
        proptest::collection::btree_map(
            0u32..50,
            (
                prop_oneof![
                    Just(VerdictState::Accepted),
                    Just(VerdictState::Rejected),
                    Just(VerdictState::Uncertain)
                ],
                "[a-z \"{}]{0,12}",
            ),
            1..8,
        )
        .prop_map(|m| VerdictResponse {
            verdicts: m
                .into_iter()
                .map(|(id, (s, r))| (TrackId(id), Verdict::new(s, r)))
                .collect(),
        })
    }

    proptest! {
        #[test]
        fn verdict_round_trip(resp in verdict_map()) {
            let expected: BTreeSet<TrackId> = resp.verdicts.keys().copied().collect();
            prop_assert_eq!(parse_verdicts(&serialize_verdicts(&resp), &expected).unwrap(), resp);
        }

        #[test]
        fn concepts_survive_surrounding_prose(
            before in "[a-zA-Z .,:!\n]{0,60}",
            after in "[a-zA-Z .,:!\n]{0,60}",
        ) {
            let json = r#"{"query_type":"referring","concept_pairs":[{"core":"dog","broad":"animal"}]}"#;
            let r = parse_concepts(&format!("{before}{json}{after}")).unwrap();
            prop_assert_eq!(r.pairs[0].core.as_str(), "dog");
        }

        #[test]
        fn prose_without_braces_has_no_json(text in "[a-zA-Z .,:!\n\\[\\]\"]{0,80}") {
            prop_assert_eq!(parse_concepts(&text), Err(ParseError::NoJson));
        }
    }
}
