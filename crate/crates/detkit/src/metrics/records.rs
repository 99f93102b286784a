//! JSON-lines box records: one object per line with
//! {image_id, class_id, cx, cy, w, h, score?}. Ground-truth files omit the
//! score; prediction files require it.

use std::io::Write;

use crate::error::{malformed, Result};
use crate::loss::BoxCwh;

use super::{Detection, GroundTruth};

/// One record of the wire format.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub image_id: u64,
    pub class_id: u32,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl BoxRecord {
    fn bbox(&self) -> Result<BoxCwh> {
        BoxCwh::new(self.cx, self.cy, self.w, self.h)
            .map_err(|e| malformed(format!("invalid box: {e}")))
    }
}

/// Parse JSON-lines records. Blank lines are ignored; any malformed line is
/// an error naming the line number.
pub fn parse_records_jsonl(bytes: &[u8]) -> Result<Vec<BoxRecord>> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| malformed("records file is not valid UTF-8"))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: BoxRecord = serde_json::from_str(line)
            .map_err(|e| malformed(format!("line {}: {e}", lineno + 1)))?;
        // Surface bad geometry at parse time rather than mid-evaluation.
        record.bbox().map_err(|e| malformed(format!("line {}: {e}", lineno + 1)))?;
        if let Some(s) = record.score {
            if !(s.is_finite() && (0.0..=1.0).contains(&s)) {
                return Err(malformed(format!("line {}: score {s} outside [0, 1]", lineno + 1)));
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Parse a ground-truth file; scores, if present, are ignored.
pub fn parse_gt_jsonl(bytes: &[u8]) -> Result<Vec<GroundTruth>> {
    parse_records_jsonl(bytes)?
        .into_iter()
        .map(|r| Ok(GroundTruth::new(r.image_id, r.class_id, r.bbox()?)))
        .collect()
}

/// Parse a predictions file; every record must carry a score.
pub fn parse_pred_jsonl(bytes: &[u8]) -> Result<Vec<Detection>> {
    parse_records_jsonl(bytes)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let score = r
                .score
                .ok_or_else(|| malformed(format!("prediction record {} is missing a score", i + 1)))?;
            Detection::new(r.image_id, r.class_id, r.bbox()?, score)
        })
        .collect()
}

pub fn write_gt_jsonl(gts: &[GroundTruth], out: &mut impl Write) -> std::io::Result<()> {
    for g in gts {
        let record = BoxRecord {
            image_id: g.image_id,
            class_id: g.class_id,
            cx: g.bbox.cx(),
            cy: g.bbox.cy(),
            w: g.bbox.w(),
            h: g.bbox.h(),
            score: None,
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pred_jsonl(dets: &[Detection], out: &mut impl Write) -> std::io::Result<()> {
    for d in dets {
        let record = BoxRecord {
            image_id: d.image_id,
            class_id: d.class_id,
            cx: d.bbox.cx(),
            cy: d.bbox.cy(),
            w: d.bbox.w(),
            h: d.bbox.h(),
            score: Some(d.score),
        };
        serde_json::to_writer(&mut *out, &record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
