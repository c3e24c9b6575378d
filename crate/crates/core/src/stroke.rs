//! Stroke-format sketch data: the compact `[dx, dy, p]` form used on disk and
//! the one-hot 5-tuple form the models consume.

use std::io::BufRead;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// One point in compact form. `lift` is the `p` flag: the pen leaves the
/// paper after this point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrokePoint3 {
    pub dx: Real,
    pub dy: Real,
    pub lift: bool,
}

impl StrokePoint3 {
    pub fn new(dx: Real, dy: Real, lift: bool) -> Self {
        Self { dx, dy, lift }
    }
}

// Serialized as the `[dx, dy, p]` triple of the QuickDraw exports.
impl Serialize for StrokePoint3 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(3)?;
        t.serialize_element(&(self.dx as f64))?;
        t.serialize_element(&(self.dy as f64))?;
        t.serialize_element(&u8::from(self.lift))?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for StrokePoint3 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct TripleVisitor;

        impl<'de> Visitor<'de> for TripleVisitor {
            type Value = StrokePoint3;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a [dx, dy, p] triple with p in {0, 1}")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<Self::Value, A::Error> {
                let dx: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(0, &self))?;
                let dy: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(1, &self))?;
                let p: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(2, &self))?;
                if seq.next_element::<de::IgnoredAny>()?.is_some() {
                    return Err(de::Error::invalid_length(4, &self));
                }
                if !dx.is_finite() || !dy.is_finite() {
                    return Err(de::Error::custom("non-finite offset"));
                }
                let lift = if p == 0.0 {
                    false
                } else if p == 1.0 {
                    true
                } else {
                    return Err(de::Error::custom(format!("pen flag {p} is not 0 or 1")));
                };
                Ok(StrokePoint3::new(dx as Real, dy as Real, lift))
            }
        }

        deserializer.deserialize_tuple(3, TripleVisitor)
    }
}

/// Categorical pen state of a 5-tuple: `(q1, q2, q3)` one-hot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenState {
    /// `q1`: the pen stays on the paper.
    Down,
    /// `q2`: the pen is lifted after this point.
    Up,
    /// `q3`: the drawing has ended.
    End,
}

impl PenState {
    pub const ALL: [PenState; 3] = [PenState::Down, PenState::Up, PenState::End];

    pub fn index(self) -> usize {
        match self {
            PenState::Down => 0,
            PenState::Up => 1,
            PenState::End => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn one_hot(self) -> [Real; 3] {
        let mut q = [0.0; 3];
        q[self.index()] = 1.0;
        q
    }
}

/// One 5-tuple `(dx, dy, q1, q2, q3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint5 {
    pub dx: Real,
    pub dy: Real,
    pub pen: PenState,
}

impl StrokePoint5 {
    /// The start-of-sequence symbol `S0 = (0, 0, 1, 0, 0)`.
    pub const START: StrokePoint5 = StrokePoint5 { dx: 0.0, dy: 0.0, pen: PenState::Down };
    /// End token and padding tuple `(0, 0, 0, 0, 1)`.
    pub const END: StrokePoint5 = StrokePoint5 { dx: 0.0, dy: 0.0, pen: PenState::End };

    pub fn new(dx: Real, dy: Real, pen: PenState) -> Self {
        Self { dx, dy, pen }
    }

    pub fn to_array(self) -> [Real; 5] {
        let q = self.pen.one_hot();
        [self.dx, self.dy, q[0], q[1], q[2]]
    }

    /// Parses a raw 5-tuple, rejecting anything that is not an exact one-hot pen state.
    pub fn from_array(v: [Real; 5], index: usize) -> Result<Self> {
        if !v[0].is_finite() || !v[1].is_finite() {
            return Err(Error::MalformedPenState { index, reason: "non-finite offset".into() });
        }
        let mut pen = None;
        for (k, &q) in v[2..].iter().enumerate() {
            if q == 1.0 {
                if pen.is_some() {
                    return Err(Error::MalformedPenState { index, reason: format!("{:?} is not one-hot", &v[2..]) });
                }
                pen = PenState::from_index(k);
            } else if q != 0.0 {
                return Err(Error::MalformedPenState { index, reason: format!("{:?} is not one-hot", &v[2..]) });
            }
        }
        let pen = pen.ok_or_else(|| Error::MalformedPenState { index, reason: "no pen state set".into() })?;
        Ok(Self::new(v[0], v[1], pen))
    }
}

/// A sketch in 5-tuple form: real points, then optionally the end token and padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sketch {
    pub points: Vec<StrokePoint5>,
    pub label: String,
}

impl Sketch {
    pub fn new(points: Vec<StrokePoint5>, label: impl Into<String>) -> Self {
        Self { points, label: label.into() }
    }

    pub fn from_stroke3(points: &[StrokePoint3], label: impl Into<String>) -> Self {
        let mut out: Vec<StrokePoint5> = points.iter().map(|p| stroke3_to_5(*p)).collect();
        out.push(StrokePoint5::END);
        Self::new(out, label)
    }

    /// Checks that at most one end token exists apart from padding and that
    /// everything after it is padding.
    pub fn validate(&self) -> Result<()> {
        if let Some(end) = self.points.iter().position(|p| p.pen == PenState::End) {
            for (i, p) in self.points.iter().enumerate().skip(end) {
                if *p != StrokePoint5::END {
                    return Err(Error::MalformedPenState {
                        index: i,
                        reason: "point after end token is not padding".into(),
                    });
                }
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.dx.is_finite() || !p.dy.is_finite() {
                return Err(Error::MalformedPenState { index: i, reason: "non-finite offset".into() });
            }
        }
        Ok(())
    }

    /// Points before the end token.
    pub fn real_points(&self) -> &[StrokePoint5] {
        let end = self.points.iter().position(|p| p.pen == PenState::End).unwrap_or(self.points.len());
        &self.points[..end]
    }

    pub fn has_end(&self) -> bool {
        self.points.iter().any(|p| p.pen == PenState::End)
    }

    pub fn len_real(&self) -> usize {
        self.real_points().len()
    }

    /// Fixed-length layout: real points, end token, padding. Real points beyond
    /// `len - 1` are truncated so the end token always fits.
    pub fn padded(&self, len: usize) -> Vec<StrokePoint5> {
        let real = self.real_points();
        let keep = real.len().min(len.saturating_sub(1));
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&real[..keep]);
        out.resize(len, StrokePoint5::END);
        out
    }

    pub fn to_stroke3(&self) -> Vec<StrokePoint3> {
        self.real_points()
            .iter()
            .map(|p| StrokePoint3::new(p.dx, p.dy, p.pen == PenState::Up))
            .collect()
    }
}

fn stroke3_to_5(p: StrokePoint3) -> StrokePoint5 {
    StrokePoint5::new(p.dx, p.dy, if p.lift { PenState::Up } else { PenState::Down })
}

/// Expands a compact sketch into `n_max + 1` 5-tuples: the real points, one
/// end token, then padding.
pub fn to_stroke5(points: &[StrokePoint3], n_max: usize) -> Result<Vec<StrokePoint5>> {
    if points.len() > n_max {
        return Err(Error::TooLong { len: points.len(), n_max });
    }
    let mut out: Vec<StrokePoint5> = points.iter().map(|p| stroke3_to_5(*p)).collect();
    out.resize(n_max + 1, StrokePoint5::END);
    Ok(out)
}

/// Collapses 5-tuples back to compact form, stripping the end token and padding.
pub fn from_stroke5(seq: &[StrokePoint5]) -> Result<Vec<StrokePoint3>> {
    let sketch = Sketch::new(seq.to_vec(), "");
    sketch.validate()?;
    Ok(sketch.to_stroke3())
}

/// Same as [`from_stroke5`] for raw tuples whose pen state is not yet validated.
pub fn from_stroke5_raw(seq: &[[Real; 5]]) -> Result<Vec<StrokePoint3>> {
    let points = seq
        .iter()
        .enumerate()
        .map(|(i, v)| StrokePoint5::from_array(*v, i))
        .collect::<Result<Vec<_>>>()?;
    from_stroke5(&points)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SketchRecord {
    pub label: String,
    pub drawing: Vec<StrokePoint3>,
}

impl SketchRecord {
    pub fn from_sketch(sketch: &Sketch) -> Self {
        Self { label: sketch.label.clone(), drawing: sketch.to_stroke3() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchDataset {
    pub sketches: Vec<Sketch>,
    pub n_max: usize,
    /// Divisor already applied to every offset; multiply by it to recover raw units.
    pub offset_scale: Real,
}

impl SketchDataset {
    /// Builds a dataset from sketches, computing `n_max` from the longest one.
    pub fn new(sketches: Vec<Sketch>) -> Result<Self> {
        if sketches.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_max = sketches.iter().map(Sketch::len_real).max().unwrap_or(0);
        Ok(Self { sketches, n_max, offset_scale: 1.0 })
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    /// Writes the dataset as line-delimited `{"label", "drawing"}` records.
    pub fn write_records<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for s in &self.sketches {
            serde_json::to_writer(&mut w, &SketchRecord::from_sketch(s))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Deterministic split into `(train, held_out)` with the last `held_out` sketches held out.
    pub fn split(&self, held_out: usize) -> Result<(SketchDataset, SketchDataset)> {
        if held_out == 0 || held_out >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "held-out size {held_out} must be in 1..{}",
                self.len()
            )));
        }
        let cut = self.len() - held_out;
        let mk = |s: &[Sketch]| SketchDataset {
            sketches: s.to_vec(),
            n_max: self.n_max,
            offset_scale: self.offset_scale,
        };
        Ok((mk(&self.sketches[..cut]), mk(&self.sketches[cut..])))
    }
}

#[derive(Clone, Debug)]
pub struct ParsedDataset {
    pub dataset: SketchDataset,
    /// Lines that were not valid records and were skipped.
    pub skipped: usize,
}

/// Reads line-delimited `{"label": ..., "drawing": [[dx,dy,p], ...]}` records.
/// Blank lines are ignored; malformed records are skipped and counted.
pub fn parse_stroke3_lines<R: BufRead>(reader: R) -> Result<ParsedDataset> {
    let mut sketches = Vec::new();
    let mut skipped = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(rec) => sketches.push(Sketch::from_stroke3(&rec.drawing, rec.label)),
            Err(e) => {
                log::debug!("skipping line {}: {e}", lineno + 1);
                skipped += 1;
            }
        }
    }
    let dataset = SketchDataset::new(sketches)?;
    Ok(ParsedDataset { dataset, skipped })
}

pub fn parse_record(line: &str) -> Result<SketchRecord> {
    let rec: SketchRecord = serde_json::from_str(line)?;
    if rec.drawing.is_empty() {
        return Err(Error::InvalidRecord { line: 0, reason: "empty drawing".into() });
    }
    Ok(rec)
}

/// Divides every offset by the spread of the dataset's offset vectors,
/// `sqrt(mean |v - mean(v)|^2)`, and records the cumulative scale.
pub fn normalize_offsets(dataset: &SketchDataset) -> Result<SketchDataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let offsets = || dataset.sketches.iter().flat_map(|s| s.real_points().iter());
    let n = offsets().count();
    if n == 0 {
        return Err(Error::ZeroVariance);
    }
    let nf = n as f64;
    let (sx, sy) = offsets().fold((0.0f64, 0.0f64), |(x, y), p| (x + p.dx as f64, y + p.dy as f64));
    let (mx, my) = (sx / nf, sy / nf);
    let var = offsets()
        .map(|p| {
            let ex = p.dx as f64 - mx;
            let ey = p.dy as f64 - my;
            ex * ex + ey * ey
        })
        .sum::<f64>()
        / nf;
    let std = var.sqrt();
    if !(std > 0.0) || !std.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let scale = std as Real;
    let sketches = dataset
        .sketches
        .iter()
        .map(|s| {
            let points = s
                .points
                .iter()
                .map(|p| StrokePoint5::new(p.dx / scale, p.dy / scale, p.pen))
                .collect();
            Sketch::new(points, s.label.clone())
        })
        .collect();
    Ok(SketchDataset { sketches, n_max: dataset.n_max, offset_scale: dataset.offset_scale * scale })
}

/// Per-sketch Ske-score: lifts divided by on-paper points, end token and padding excluded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeScore {
    pub value: Real,
    /// No on-paper points; `value` is then the raw lift count.
    pub degenerate: bool,
}

pub fn ske_score(sketch: &Sketch) -> SkeScore {
    let (mut down, mut up) = (0usize, 0usize);
    for p in sketch.real_points() {
        match p.pen {
            PenState::Down => down += 1,
            PenState::Up => up += 1,
            PenState::End => {}
        }
    }
    if down == 0 {
        SkeScore { value: up as Real, degenerate: true }
    } else {
        SkeScore { value: up as Real / down as Real, degenerate: false }
    }
}
