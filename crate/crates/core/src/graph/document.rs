//! Canonical JSON interchange format for layout graphs.
//!
//! ```json
//! { "objects": [ { "id": "o1", "category": "sky", "grid_cell": 2, "size": 6,
//!                  "appearance": { "mode": "seed", "seed": 7 } } ],
//!   "relations": [ { "subject": "o1", "predicate": "above", "object": "o2" } ] }
//! ```

use serde::{Deserialize, Serialize};
use serde_path_to_error::Segment;

use super::{AppearanceControl, LayoutGraph, LayoutObject, LocationVector, Predicate, Relation};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    objects: Vec<ObjectDoc>,
    relations: Vec<RelationDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectDoc {
    id: String,
    category: String,
    grid_cell: i64,
    size: i64,
    appearance: AppearanceDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AppearanceMode {
    Random,
    Seed,
    Explicit,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppearanceDoc {
    mode: AppearanceMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationDoc {
    subject: String,
    predicate: Predicate,
    object: String,
}

/// Parses a graph document. Errors carry a JSON-pointer path such as
/// `/objects/2/grid_cell`.
pub fn parse_graph(doc: &str) -> Result<LayoutGraph> {
    let mut de = serde_json::Deserializer::from_str(doc);
    let parsed: GraphDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| path_error("", e))?;
    de.end().map_err(|e| Error::Document {
        path: String::new(),
        message: e.to_string(),
    })?;
    from_doc(parsed, "")
}

/// Same as [`parse_graph`] for an already-decoded JSON value embedded in a
/// larger document; `base` is prefixed to error paths.
pub fn parse_graph_value(value: serde_json::Value, base: &str) -> Result<LayoutGraph> {
    let parsed: GraphDoc = serde_path_to_error::deserialize(value).map_err(|e| path_error(base, e))?;
    from_doc(parsed, base)
}

pub fn serialize_graph(g: &LayoutGraph) -> String {
    let mut s = serde_json::to_string_pretty(&to_doc(g)).expect("graph documents always serialize");
    s.push('\n');
    s
}

pub fn graph_to_value(g: &LayoutGraph) -> serde_json::Value {
    serde_json::to_value(to_doc(g)).expect("graph documents always serialize")
}

fn path_error<E: std::fmt::Display>(base: &str, e: serde_path_to_error::Error<E>) -> Error {
    let mut path = base.to_string();
    for seg in e.path().iter() {
        match seg {
            Segment::Seq { index } => path.push_str(&format!("/{index}")),
            Segment::Map { key } => path.push_str(&format!("/{key}")),
            Segment::Enum { variant } => path.push_str(&format!("/{variant}")),
            Segment::Unknown => path.push_str("/?"),
        }
    }
    let message = e.inner().to_string();
    for prefix in ["missing field `", "unknown field `"] {
        if let Some(rest) = message.strip_prefix(prefix) {
            if let Some(end) = rest.find('`') {
                let field = format!("/{}", &rest[..end]);
                if !path.ends_with(&field) {
                    path.push_str(&field);
                }
            }
        }
    }
    if path.is_empty() {
        path.push('/');
    }
    Error::Document { path, message }
}

fn from_doc(doc: GraphDoc, base: &str) -> Result<LayoutGraph> {
    let mut objects = Vec::with_capacity(doc.objects.len());
    for (i, o) in doc.objects.into_iter().enumerate() {
        let path = format!("{base}/objects/{i}");
        let location = LocationVector::new(o.grid_cell, o.size).map_err(|e| {
            let field = match &e {
                Error::OutOfRange { field: "size_level", .. } => "size",
                _ => "grid_cell",
            };
            Error::Document {
                path: format!("{path}/{field}"),
                message: e.to_string(),
            }
        })?;
        let appearance = appearance_from_doc(o.appearance, &format!("{path}/appearance"))?;
        objects.push(LayoutObject {
            id: o.id,
            category: o.category,
            location,
            appearance,
            title_text: o.text,
        });
    }
    let relations = doc
        .relations
        .into_iter()
        .map(|r| Relation {
            subject: r.subject,
            predicate: r.predicate,
            object: r.object,
        })
        .collect();
    Ok(LayoutGraph { objects, relations })
}

fn appearance_from_doc(a: AppearanceDoc, path: &str) -> Result<AppearanceControl> {
    let err = |field: &str, message: &str| Error::Document {
        path: format!("{path}/{field}"),
        message: message.to_string(),
    };
    match (a.mode, a.seed, a.vector) {
        (AppearanceMode::Random, None, None) => Ok(AppearanceControl::Random),
        (AppearanceMode::Seed, Some(seed), None) => Ok(AppearanceControl::Seed(seed)),
        (AppearanceMode::Explicit, None, Some(v)) => {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                Err(err("vector", "explicit appearance vector must be non-empty and finite"))
            } else {
                Ok(AppearanceControl::Explicit(v))
            }
        }
        (AppearanceMode::Seed, None, _) => Err(err("seed", "mode \"seed\" requires a seed")),
        (AppearanceMode::Explicit, _, None) => {
            Err(err("vector", "mode \"explicit\" requires a vector"))
        }
        (_, Some(_), _) => Err(err("seed", "seed is only allowed with mode \"seed\"")),
        (_, _, Some(_)) => Err(err("vector", "vector is only allowed with mode \"explicit\"")),
    }
}

fn to_doc(g: &LayoutGraph) -> GraphDoc {
    GraphDoc {
        objects: g
            .objects
            .iter()
            .map(|o| {
                let appearance = match &o.appearance {
                    AppearanceControl::Random => AppearanceDoc {
                        mode: AppearanceMode::Random,
                        seed: None,
                        vector: None,
                    },
                    AppearanceControl::Seed(s) => AppearanceDoc {
                        mode: AppearanceMode::Seed,
                        seed: Some(*s),
                        vector: None,
                    },
                    AppearanceControl::Explicit(v) => AppearanceDoc {
                        mode: AppearanceMode::Explicit,
                        seed: None,
                        vector: Some(v.clone()),
                    },
                };
                ObjectDoc {
                    id: o.id.clone(),
                    category: o.category.clone(),
                    grid_cell: o.location.grid_cell() as i64,
                    size: o.location.size_level() as i64,
                    appearance,
                    text: o.title_text.clone(),
                }
            })
            .collect(),
        relations: g
            .relations
            .iter()
            .map(|r| RelationDoc {
                subject: r.subject.clone(),
                predicate: r.predicate,
                object: r.object.clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SINGLE: &str = r#"{"objects":[{"id":"a","category":"sky","grid_cell":2,"size":6,"appearance":{"mode":"random"}}],"relations":[]}"#;

    fn doc_path(doc: &str) -> String {
        match parse_graph(doc) {
            Err(Error::Document { path, .. }) => path,
            other => panic!("expected document error, got {other:?}"),
        }
    }

    #[test]
    fn single_object_roundtrips_byte_identically() {
        let g = parse_graph(SINGLE).unwrap();
        let canonical = serialize_graph(&g);
        let again = serialize_graph(&parse_graph(&canonical).unwrap());
        assert_eq!(canonical, again);
        assert_eq!(parse_graph(&canonical).unwrap(), g);
    }

    #[test]
    fn missing_objects_reports_root_path() {
        assert_eq!(doc_path(r#"{"relations":[]}"#), "/objects");
    }

    #[test]
    fn errors_are_path_qualified() {
        let bad_cell = SINGLE.replace("\"grid_cell\":2", "\"grid_cell\":31");
        assert_eq!(doc_path(&bad_cell), "/objects/0/grid_cell");
        let bad_size = SINGLE.replace("\"size\":6", "\"size\":0");
        assert_eq!(doc_path(&bad_size), "/objects/0/size");
        let unknown = SINGLE.replace("\"size\":6", "\"size\":6,\"colour\":1");
        assert_eq!(doc_path(&unknown), "/objects/0/colour");
        let bad_pred = r#"{"objects":[],"relations":[{"subject":"a","predicate":"near","object":"b"}]}"#;
        assert_eq!(doc_path(bad_pred), "/relations/0/predicate");
        let seedless = SINGLE.replace(r#""mode":"random""#, r#""mode":"seed""#);
        assert_eq!(doc_path(&seedless), "/objects/0/appearance/seed");
        let stray = SINGLE.replace(r#""mode":"random""#, r#""mode":"random","vector":[1.0]"#);
        assert_eq!(doc_path(&stray), "/objects/0/appearance/vector");
    }

    #[test]
    fn embedded_documents_prefix_paths() {
        let value: serde_json::Value = serde_json::from_str(r#"{"objects":[{}],"relations":[]}"#).unwrap();
        match parse_graph_value(value, "/graph") {
            Err(Error::Document { path, .. }) => assert_eq!(path, "/graph/objects/0/id"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn explicit_and_seed_modes_roundtrip() {
        let doc = r#"{"objects":[
            {"id":"a","category":"sky","grid_cell":0,"size":1,"appearance":{"mode":"seed","seed":42}},
            {"id":"t","category":"title","grid_cell":24,"size":10,"appearance":{"mode":"explicit","vector":[0.25,-1.5,3.0e-7]},"text":"Sheep"}],
            "relations":[{"subject":"a","predicate":"above","object":"t"}]}"#;
        let g = parse_graph(doc).unwrap();
        assert_eq!(g.objects[0].appearance, AppearanceControl::Seed(42));
        assert_eq!(g.objects[1].title_text.as_deref(), Some("Sheep"));
        assert_eq!(parse_graph(&serialize_graph(&g)).unwrap(), g);
    }
}
