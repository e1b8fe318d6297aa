//! Structure metrics for JSON and XML data files.
//!
//! JSON: every object is an entity, its key set (sorted) is its type and its
//! key count its property count. Arrays are not entities; they only add a
//! nesting level. XML: every element is an entity typed by its tag name, with
//! attributes plus child elements as properties. The root sits at level 1.

use std::collections::BTreeSet;

use quick_xml::events::Event;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFileMetrics {
    pub num_entities: u32,
    pub num_entity_types: u32,
    pub max_properties_per_entity: u32,
    pub max_nesting_level: u32,
    /// The document did not parse; all counts are zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degraded: bool,
}

impl DataFileMetrics {
    fn degraded() -> Self {
        DataFileMetrics { degraded: true, ..Default::default() }
    }
}

#[derive(Default)]
struct Tally {
    entities: u32,
    types: BTreeSet<String>,
    max_props: u32,
    max_level: u32,
}

impl Tally {
    fn entity(&mut self, signature: String, props: u32) {
        self.entities += 1;
        self.types.insert(signature);
        self.max_props = self.max_props.max(props);
    }

    fn finish(self) -> DataFileMetrics {
        DataFileMetrics {
            num_entities: self.entities,
            num_entity_types: self.types.len() as u32,
            max_properties_per_entity: self.max_props,
            max_nesting_level: self.max_level,
            degraded: false,
        }
    }
}

pub fn analyze_json(content: &[u8]) -> DataFileMetrics {
    let value: Value = match serde_json::from_slice(content) {
        Ok(v) => v,
        Err(_) => return DataFileMetrics::degraded(),
    };
    let mut tally = Tally { max_level: 1, ..Default::default() };
    // explicit stack: documents can nest deeper than we want to recurse
    let mut stack = vec![(&value, 1u32)];
    while let Some((v, level)) = stack.pop() {
        match v {
            Value::Object(map) => {
                tally.max_level = tally.max_level.max(level);
                let signature = map.keys().map(String::as_str).collect::<Vec<_>>().join("\u{1f}");
                tally.entity(signature, map.len() as u32);
                stack.extend(map.values().map(|c| (c, level + 1)));
            }
            Value::Array(items) => {
                tally.max_level = tally.max_level.max(level);
                stack.extend(items.iter().map(|c| (c, level + 1)));
            }
            _ => {}
        }
    }
    tally.finish()
}

pub fn analyze_xml(content: &[u8]) -> DataFileMetrics {
    match xml_tally(content) {
        Some(t) => t.finish(),
        None => DataFileMetrics::degraded(),
    }
}

fn xml_tally(content: &[u8]) -> Option<Tally> {
    let mut reader = quick_xml::Reader::from_reader(content);
    reader.config_mut().check_end_names = true;

    // (tag, attribute count, child elements so far) per open element
    let mut open: Vec<(String, u32, u32)> = Vec::new();
    let mut tally = Tally::default();
    let mut roots = 0;
    let mut buf = Vec::new();
    loop {
        let event = reader.read_event_into(&mut buf).ok()?;
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                let mut attrs = 0;
                for a in e.attributes() {
                    a.ok()?;
                    attrs += 1;
                }
                match open.last_mut() {
                    Some(parent) => parent.2 += 1,
                    None => roots += 1,
                }
                let level = open.len() as u32 + 1;
                tally.max_level = tally.max_level.max(level);
                if matches!(event, Event::Empty(_)) {
                    tally.entity(name, attrs);
                } else {
                    open.push((name, attrs, 0));
                }
            }
            Event::End(_) => {
                let (name, attrs, children) = open.pop()?;
                tally.entity(name, attrs + children);
            }
            Event::Text(ref t) if open.is_empty() => {
                // character data outside the root element
                if !t.iter().all(u8::is_ascii_whitespace) {
                    return None;
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }
    if !open.is_empty() || roots != 1 {
        return None;
    }
    Some(tally)
}
