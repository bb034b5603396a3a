//! One training pair per line:
//!
//! ```text
//! {"id":"0","tokens":[5,9],"regions":[{"feat":[..],"bbox":[x1,y1,x2,y2],"img_w":640,"img_h":480,"cls_probs":[..]}]}
//! ```
//!
//! Writing is canonical (fixed field order, reals as `f32` with nine
//! significant digits) so generate, load and re-serialize is byte-exact.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::instance::{location_vector, RegionInput, TrainingInstance};

pub const CLS_PROBS_TOL: f64 = 1e-5;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    feat: Vec<f32>,
    bbox: Vec<f32>,
    img_w: u32,
    img_h: u32,
    cls_probs: Vec<f32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    id: String,
    tokens: Vec<i64>,
    regions: Vec<RawRegion>,
}

fn violation(line: usize, field: &'static str, reason: impl Into<String>) -> Error {
    Error::SchemaViolation { line, field, reason: reason.into() }
}

fn convert(line: usize, raw: RawInstance, dims: &mut Option<(usize, usize)>) -> Result<TrainingInstance> {
    if raw.id.is_empty() {
        return Err(violation(line, "id", "empty"));
    }
    if raw.tokens.is_empty() {
        return Err(violation(line, "tokens", "at least one token required"));
    }
    let tokens = raw
        .tokens
        .iter()
        .map(|&t| u32::try_from(t).map_err(|_| violation(line, "tokens", format!("invalid token id {t}"))))
        .collect::<Result<Vec<_>>>()?;
    if raw.regions.is_empty() {
        return Err(violation(line, "regions", "at least one region required"));
    }
    let mut regions = Vec::with_capacity(raw.regions.len());
    for r in raw.regions {
        if r.feat.is_empty() || r.feat.iter().any(|v| !v.is_finite()) {
            return Err(violation(line, "feat", "must be a nonempty list of finite reals"));
        }
        let bbox: [f32; 4] = r
            .bbox
            .as_slice()
            .try_into()
            .map_err(|_| violation(line, "bbox", format!("expected 4 values, got {}", r.bbox.len())))?;
        location_vector(bbox.map(f64::from), r.img_w, r.img_h)
            .map_err(|e| violation(line, "bbox", e.to_string()))?;
        let sum: f64 = r.cls_probs.iter().map(|&p| f64::from(p)).sum();
        if r.cls_probs.is_empty()
            || r.cls_probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite())
            || (sum - 1.0).abs() > CLS_PROBS_TOL
        {
            return Err(violation(
                line,
                "cls_probs",
                format!("not a probability vector (sum {sum})"),
            ));
        }
        match *dims {
            None => *dims = Some((r.feat.len(), r.cls_probs.len())),
            Some((dv, kc)) => {
                if r.feat.len() != dv {
                    return Err(violation(line, "feat", format!("dimension {} differs from {dv}", r.feat.len())));
                }
                if r.cls_probs.len() != kc {
                    return Err(violation(
                        line,
                        "cls_probs",
                        format!("{} classes differs from {kc}", r.cls_probs.len()),
                    ));
                }
            }
        }
        regions.push(RegionInput { feat: r.feat, bbox, img_w: r.img_w, img_h: r.img_h, cls_probs: r.cls_probs });
    }
    Ok(TrainingInstance { id: raw.id, tokens, regions })
}

/// Parses and validates JSON-lines text. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<TrainingInstance>> {
    let mut out = Vec::new();
    let mut dims = None;
    let mut ids = HashSet::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        if l.trim().is_empty() {
            continue;
        }
        let raw: RawInstance =
            serde_json::from_str(l).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let inst = convert(line, raw, &mut dims)?;
        if !ids.insert(inst.id.clone()) {
            return Err(violation(line, "id", format!("duplicate id `{}`", inst.id)));
        }
        out.push(inst);
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<TrainingInstance>> {
    parse_dataset(&fs::read_to_string(path)?)
}

fn push_reals(out: &mut String, vals: &[f32]) {
    out.push('[');
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v:.8e}").unwrap();
    }
    out.push(']');
}

/// Canonical single-line JSON for one instance (no trailing newline).
pub fn serialize_instance(inst: &TrainingInstance) -> String {
    let mut s = String::with_capacity(256);
    s.push_str("{\"id\":");
    s.push_str(&serde_json::to_string(&inst.id).expect("string serializes"));
    s.push_str(",\"tokens\":[");
    for (i, t) in inst.tokens.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{t}").unwrap();
    }
    s.push_str("],\"regions\":[");
    for (i, r) in inst.regions.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str("{\"feat\":");
        push_reals(&mut s, &r.feat);
        s.push_str(",\"bbox\":");
        push_reals(&mut s, &r.bbox);
        write!(s, ",\"img_w\":{},\"img_h\":{},\"cls_probs\":", r.img_w, r.img_h).unwrap();
        push_reals(&mut s, &r.cls_probs);
        s.push('}');
    }
    s.push_str("]}");
    s
}

pub fn write_dataset(path: impl AsRef<Path>, instances: &[TrainingInstance]) -> Result<()> {
    let mut out = String::new();
    for inst in instances {
        out.push_str(&serialize_instance(inst));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// `(visual_dim, num_classes)` shared by all regions, or `None` when empty.
pub fn dataset_dims(instances: &[TrainingInstance]) -> Option<(usize, usize)> {
    let r = instances.first()?.regions.first()?;
    Some((r.feat.len(), r.cls_probs.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"a","tokens":[3,4],"regions":[{"feat":[0.5,-1],"bbox":[0,0,10,20],"img_w":40,"img_h":40,"cls_probs":[0.25,0.75]}]}"#;

    #[test]
    fn empty_input_is_an_empty_dataset() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("\n\n").unwrap().is_empty());
    }

    #[test]
    fn parses_a_valid_line() {
        let d = parse_dataset(LINE).unwrap();
        assert_eq!(d[0].tokens, [3, 4]);
        assert_eq!(d[0].regions[0].class_id(), 1);
        assert_eq!(dataset_dims(&d), Some((2, 2)));
    }

    #[test]
    fn unnormalized_class_probs_are_rejected() {
        let bad = LINE.replace("[0.25,0.75]", "[0.25,0.65]");
        let text = format!("{LINE}\n{}", bad.replace("\"a\"", "\"b\""));
        match parse_dataset(&text) {
            Err(Error::SchemaViolation { line: 2, field: "cls_probs", .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = format!("{LINE}\n{{\"id\":");
        assert!(matches!(parse_dataset(&text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn schema_checks() {
        let cases = [
            (LINE.replace("[0,0,10,20]", "[0,0,50,20]"), "bbox"),
            (LINE.replace("[0,0,10,20]", "[0,0,10]"), "bbox"),
            (LINE.replace("[3,4]", "[]"), "tokens"),
            (LINE.replace("[3,4]", "[-1]"), "tokens"),
            (LINE.replace("\"a\"", "\"\""), "id"),
        ];
        for (text, field) in cases {
            match parse_dataset(&text) {
                Err(Error::SchemaViolation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        let mixed = format!("{LINE}\n{}", LINE.replace("\"a\"", "\"b\"").replace("[0.5,-1]", "[0.5]"));
        assert!(matches!(parse_dataset(&mixed), Err(Error::SchemaViolation { line: 2, field: "feat", .. })));
        let dup = format!("{LINE}\n{LINE}");
        assert!(matches!(parse_dataset(&dup), Err(Error::SchemaViolation { field: "id", .. })));
        let extra = LINE.replace("\"id\"", "\"extra\":1,\"id\"");
        assert!(matches!(parse_dataset(&extra), Err(Error::Parse { .. })));
    }

    #[test]
    fn canonical_serialization_round_trips() {
        let d = parse_dataset(LINE).unwrap();
        let s = serialize_instance(&d[0]);
        assert_eq!(
            s,
            r#"{"id":"a","tokens":[3,4],"regions":[{"feat":[5.00000000e-1,-1.00000000e0],"bbox":[0.00000000e0,0.00000000e0,1.00000000e1,2.00000000e1],"img_w":40,"img_h":40,"cls_probs":[2.50000000e-1,7.50000000e-1]}]}"#
        );
        let again = parse_dataset(&s).unwrap();
        assert_eq!(again, d);
        assert_eq!(serialize_instance(&again[0]), s);
    }
}
