use serde_json::{json, Map, Value};

use super::{ChordLabel, GridScore, GridStep, Pitch, Voice, RESOLUTION};
use crate::error::{Error, Result};

fn schema(step: Option<usize>, message: impl Into<String>) -> Error {
    Error::Schema {
        step,
        message: message.into(),
    }
}

/// Parses the annotated chorale format:
/// `{"title": .., "resolution": 4, "steps": [{"chord": "C:maj", "S": 67, "A": null, ..}]}`.
pub fn load_chorale_json(text: &str) -> Result<GridScore> {
    let root: Value = serde_json::from_str(text)?;
    let obj = root
        .as_object()
        .ok_or_else(|| schema(None, "top level must be an object"))?;
    let title = match obj.get("title") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(schema(None, "\"title\" must be a string")),
        None => return Err(schema(None, "missing \"title\"")),
    };
    match obj.get("resolution").and_then(Value::as_u64) {
        Some(r) if r == u64::from(RESOLUTION) => {}
        Some(r) => return Err(schema(None, format!("resolution must be 4, got {r}"))),
        None => return Err(schema(None, "missing or non-integer \"resolution\"")),
    }
    let steps = obj
        .get("steps")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(None, "missing \"steps\" array"))?;
    if steps.is_empty() {
        return Err(schema(None, "\"steps\" is empty"));
    }

    let mut out = Vec::with_capacity(steps.len());
    for (i, step) in steps.iter().enumerate() {
        let step = step
            .as_object()
            .ok_or_else(|| schema(Some(i), "step must be an object"))?;
        out.push(parse_step(i, step)?);
    }
    GridScore::new(title, out)
}

fn parse_step(i: usize, step: &Map<String, Value>) -> Result<GridStep> {
    let chord = step
        .get("chord")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(Some(i), "missing chord string"))?;
    let chord: ChordLabel = chord
        .parse()
        .map_err(|_| schema(Some(i), format!("unknown chord {chord:?}")))?;
    let mut voices = [Pitch::REST; 4];
    for v in Voice::ALL {
        voices[v.index()] = match step.get(v.key()) {
            None => return Err(schema(Some(i), format!("missing voice {:?}", v.key()))),
            Some(Value::Null) => Pitch::REST,
            Some(n) => match n.as_u64() {
                Some(p) if p <= 127 => Pitch::new(p as u8)?,
                _ => {
                    return Err(schema(
                        Some(i),
                        format!("voice {} pitch {n} is outside 0..=127", v.key()),
                    ))
                }
            },
        };
    }
    Ok(GridStep::new(chord, voices))
}

pub fn to_chorale_json(score: &GridScore) -> String {
    let steps: Vec<Value> = score
        .steps()
        .iter()
        .map(|s| {
            let mut m = Map::new();
            m.insert("chord".into(), Value::String(s.chord.to_string()));
            for v in Voice::ALL {
                m.insert(v.key().into(), s.voice(v).midi().map_or(Value::Null, Value::from));
            }
            Value::Object(m)
        })
        .collect();
    let doc = json!({ "title": score.title(), "resolution": RESOLUTION, "steps": steps });
    let mut text = serde_json::to_string_pretty(&doc).expect("chorale json is serializable");
    text.push('\n');
    text
}
