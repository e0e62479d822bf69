//! Layout graphs: objects placed on a 5x5 grid with a size level, joined by
//! directed spatial relations.

mod document;
mod location;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use document::{graph_to_value, parse_graph, parse_graph_value, serialize_graph};
pub use location::{
    decode_location, encode_location, LocationBits, LocationVector, GRID_CELLS, GRID_SIDE,
    LOCATION_BITS, SIZE_LEVELS,
};

pub const SOLID_CATEGORY: &str = "solid";
pub const TITLE_CATEGORY: &str = "title";
pub const PLACEHOLDER_TITLE: &str = "Lorem Ipsum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    RightOf,
    LeftOf,
    Above,
    Below,
    Surrounding,
    Inside,
}

impl Predicate {
    pub const ALL: [Predicate; 6] = [
        Predicate::RightOf,
        Predicate::LeftOf,
        Predicate::Above,
        Predicate::Below,
        Predicate::Surrounding,
        Predicate::Inside,
    ];

    /// Row of this predicate in the predicate embedding table.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Predicate::RightOf => "right_of",
            Predicate::LeftOf => "left_of",
            Predicate::Above => "above",
            Predicate::Below => "below",
            Predicate::Surrounding => "surrounding",
            Predicate::Inside => "inside",
        }
    }

    pub fn inverse(self) -> Predicate {
        match self {
            Predicate::RightOf => Predicate::LeftOf,
            Predicate::LeftOf => Predicate::RightOf,
            Predicate::Above => Predicate::Below,
            Predicate::Below => Predicate::Above,
            Predicate::Surrounding => Predicate::Inside,
            Predicate::Inside => Predicate::Surrounding,
        }
    }
}

pub fn inverse_predicate(p: Predicate) -> Predicate {
    p.inverse()
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered category names with dense 0-based ids. Scene categories come
/// first, followed by the reserved `solid` and `title` categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryVocabulary {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl CategoryVocabulary {
    pub fn new<I, S>(scene_categories: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut entries: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        for name in scene_categories {
            let name = name.into();
            if name == SOLID_CATEGORY || name == TITLE_CATEGORY {
                return Err(Error::Dataset(format!(
                    "scene category `{name}` collides with a reserved category"
                )));
            }
            if index.insert(name.clone(), entries.len()).is_some() {
                return Err(Error::Dataset(format!("duplicate category `{name}`")));
            }
            entries.push(name);
        }
        for reserved in [SOLID_CATEGORY, TITLE_CATEGORY] {
            index.insert(reserved.to_string(), entries.len());
            entries.push(reserved.to_string());
        }
        Ok(Self { entries, index })
    }

    /// Rebuilds a vocabulary from its full entry list, as stored in a
    /// checkpoint manifest. The list must end with `solid`, `title`.
    pub fn from_entries(entries: &[String]) -> Result<Self> {
        let n = entries.len();
        if n < 2 || entries[n - 2] != SOLID_CATEGORY || entries[n - 1] != TITLE_CATEGORY {
            return Err(Error::Checkpoint(
                "vocabulary must end with the reserved `solid` and `title` entries".into(),
            ));
        }
        Self::new(entries[..n - 2].iter().cloned())
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn solid_id(&self) -> usize {
        self.index[SOLID_CATEGORY]
    }

    pub fn title_id(&self) -> usize {
        self.index[TITLE_CATEGORY]
    }
}

/// How an object's appearance vector is chosen at generation time.
#[derive(Debug, Clone, PartialEq)]
pub enum AppearanceControl {
    Random,
    Seed(u64),
    Explicit(Vec<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayoutObject {
    pub id: String,
    pub category: String,
    pub location: LocationVector,
    pub appearance: AppearanceControl,
    pub title_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Relation {
    pub subject: String,
    pub predicate: Predicate,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayoutGraph {
    pub objects: Vec<LayoutObject>,
    pub relations: Vec<Relation>,
}

impl LayoutGraph {
    pub fn object_index(&self) -> HashMap<&str, usize> {
        self.objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.id.as_str(), i))
            .collect()
    }

    pub fn title(&self) -> Option<&LayoutObject> {
        self.objects.iter().find(|o| o.category == TITLE_CATEGORY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NoObjects,
    EmptyId,
    DuplicateObjectId,
    UnknownCategory,
    UnknownObjectId,
    SelfRelation,
    DuplicateTriple,
    MultipleTitles,
    MissingTitleText,
    UnexpectedTitleText,
    AppearanceSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
    #[serde(skip)]
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(self))
        }
    }

    fn push(&mut self, kind: ViolationKind, path: String, message: impl Into<String>) {
        self.violations.push(Violation {
            path,
            message: message.into(),
            kind,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.path, v.message)?;
        }
        Ok(())
    }
}

/// Collects every violation in `g`, not only the first.
pub fn validate_graph(g: &LayoutGraph, vocab: &CategoryVocabulary) -> ValidationReport {
    let mut report = ValidationReport::default();
    if g.objects.is_empty() {
        report.push(ViolationKind::NoObjects, "/objects".into(), "graph has no objects");
    }

    let mut seen_ids = HashSet::new();
    let mut titles = 0usize;
    for (i, o) in g.objects.iter().enumerate() {
        let path = format!("/objects/{i}");
        if o.id.is_empty() {
            report.push(ViolationKind::EmptyId, format!("{path}/id"), "empty object id");
        } else if !seen_ids.insert(o.id.as_str()) {
            report.push(
                ViolationKind::DuplicateObjectId,
                format!("{path}/id"),
                format!("duplicate object id \"{}\"", o.id),
            );
        }
        if vocab.id(&o.category).is_none() {
            report.push(
                ViolationKind::UnknownCategory,
                format!("{path}/category"),
                format!("unknown category \"{}\"", o.category),
            );
        }
        let is_title = o.category == TITLE_CATEGORY;
        if is_title {
            titles += 1;
            if titles == 2 {
                report.push(ViolationKind::MultipleTitles, path.clone(), "multiple title objects");
            }
        }
        match (&o.title_text, is_title) {
            (None, true) => report.push(
                ViolationKind::MissingTitleText,
                format!("{path}/text"),
                "title object needs non-empty text",
            ),
            (Some(t), true) if t.trim().is_empty() => report.push(
                ViolationKind::MissingTitleText,
                format!("{path}/text"),
                "title object needs non-empty text",
            ),
            (Some(_), false) => report.push(
                ViolationKind::UnexpectedTitleText,
                format!("{path}/text"),
                "text is only allowed on title objects",
            ),
            _ => {}
        }
    }

    let mut triples = HashSet::new();
    for (i, r) in g.relations.iter().enumerate() {
        let path = format!("/relations/{i}");
        for (field, id) in [("subject", &r.subject), ("object", &r.object)] {
            if !seen_ids.contains(id.as_str()) {
                report.push(
                    ViolationKind::UnknownObjectId,
                    format!("{path}/{field}"),
                    format!("unknown object id \"{id}\""),
                );
            }
        }
        if r.subject == r.object {
            report.push(
                ViolationKind::SelfRelation,
                path.clone(),
                "relation subject and object must differ",
            );
        }
        if !triples.insert((r.subject.as_str(), r.predicate, r.object.as_str())) {
            report.push(
                ViolationKind::DuplicateTriple,
                path,
                format!("duplicate relation {} {} {}", r.subject, r.predicate, r.object),
            );
        }
    }
    report
}
