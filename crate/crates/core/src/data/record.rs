use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sketch::{Stroke, StrokeSketch, DEFAULT_CANVAS};
use crate::error::{Error, Result};

/// Where a record came from: the category file name and its zero-based line.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordId {
    pub file: String,
    pub line_index: usize,
}

impl fmt::Display for RecordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchRecord {
    pub id: RecordId,
    pub sketch: StrokeSketch,
    pub category: String,
    pub category_id: usize,
    pub label_visible: bool,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(alias = "category")]
    word: String,
    drawing: Vec<Vec<Vec<f64>>>,
}

/// Parse one line of the simplified QuickDraw NDJSON format.
///
/// Each stroke is `[[x...], [y...]]` (a trailing timing array is tolerated and
/// dropped). Coordinates outside `0..=255` are clamped. `category_id` is left
/// at 0 and `label_visible` at `true`; split construction assigns both.
pub fn parse_record(line: &str) -> Result<SketchRecord> {
    let raw: RawRecord =
        serde_json::from_str(line.trim()).map_err(|e| Error::Parse(e.to_string()))?;
    if raw.drawing.is_empty() {
        return Err(Error::Structural("drawing has no strokes".into()));
    }
    let strokes = raw
        .drawing
        .iter()
        .enumerate()
        .map(|(i, arrays)| {
            if arrays.len() < 2 {
                return Err(Error::Structural(format!(
                    "stroke {i} needs x and y arrays, found {}",
                    arrays.len()
                )));
            }
            Stroke::from_xy(&arrays[0], &arrays[1])
                .map_err(|e| Error::Structural(format!("stroke {i}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sketch = StrokeSketch::new(strokes, DEFAULT_CANVAS)?;
    sketch.clamp_to_canvas();
    Ok(SketchRecord {
        id: RecordId {
            file: String::new(),
            line_index: 0,
        },
        sketch,
        category: raw.word,
        category_id: 0,
        label_visible: true,
    })
}

/// Serialize a sketch back to a simplified-format line (integer coordinates).
pub fn to_ndjson_line(category: &str, sketch: &StrokeSketch) -> String {
    let drawing: Vec<[Vec<i64>; 2]> = sketch
        .strokes
        .iter()
        .map(|s| {
            [
                s.points.iter().map(|p| p.x.round() as i64).collect(),
                s.points.iter().map(|p| p.y.round() as i64).collect(),
            ]
        })
        .collect();
    serde_json::json!({ "word": category, "drawing": drawing }).to_string()
}

/// Parse the requested (zero-based, non-blank) lines of one category file.
///
/// Blank lines are skipped and do not count toward the line index.
pub(crate) fn load_lines(
    path: &Path,
    file_name: &str,
    wanted: &BTreeSet<usize>,
) -> Result<BTreeMap<usize, SketchRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    let last = match wanted.iter().next_back() {
        Some(&l) => l,
        None => return Ok(out),
    };
    for (index, line) in BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .enumerate()
    {
        if index > last {
            break;
        }
        let line = line?;
        if wanted.contains(&index) {
            let mut rec = parse_record(&line)
                .map_err(|e| Error::Parse(format!("{}:{index}: {e}", path.display())))?;
            rec.id = RecordId {
                file: file_name.to_string(),
                line_index: index,
            };
            out.insert(index, rec);
        }
    }
    if out.len() != wanted.len() {
        return Err(Error::Config(format!(
            "{} has fewer lines than the manifest references",
            path.display()
        )));
    }
    Ok(out)
}

/// Parse every record of a category file.
pub fn load_category_file(path: &Path) -> Result<Vec<SketchRecord>> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = crate::util::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            let mut rec = parse_record(line)?;
            rec.id = RecordId {
                file: file_name.clone(),
                line_index: index,
            };
            Ok(rec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_stroke_three_points() {
        let rec = parse_record(r#"{"word":"cat","drawing":[[[0,10,20],[5,5,9]]]}"#).unwrap();
        assert_eq!(rec.category, "cat");
        assert_eq!(rec.sketch.num_strokes(), 1);
        assert_eq!(rec.sketch.strokes[0].len(), 3);
        assert_eq!(rec.sketch.canvas, (256, 256));
        assert!(rec.label_visible);
    }

    #[test]
    fn mismatched_lengths_are_structural() {
        let err = parse_record(r#"{"word":"cat","drawing":[[[0,1,2,3],[0,1,2]]]}"#).unwrap_err();
        assert!(matches!(err, Error::Structural(_)), "{err}");
    }

    #[test]
    fn empty_drawing_is_structural() {
        let err = parse_record(r#"{"word":"cat","drawing":[]}"#).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = parse_record(r#"{"word":"cat","drawing":[[[0],[0]]"#).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn out_of_range_coordinates_are_clamped() {
        let rec = parse_record(r#"{"word":"x","drawing":[[[300,-4],[12,256]]]}"#).unwrap();
        let p = &rec.sketch.strokes[0].points;
        assert_eq!((p[0].x, p[0].y), (255.0, 12.0));
        assert_eq!((p[1].x, p[1].y), (0.0, 255.0));
    }

    #[test]
    fn timing_array_is_ignored() {
        let rec =
            parse_record(r#"{"word":"x","countrycode":"CL","drawing":[[[1,2],[3,4],[0,17]]]}"#)
                .unwrap();
        assert_eq!(rec.sketch.strokes[0].len(), 2);
    }

    #[test]
    fn ndjson_roundtrip() {
        let line = r#"{"word":"tree","drawing":[[[0,10,20],[5,5,9]],[[7],[8]]]}"#;
        let rec = parse_record(line).unwrap();
        let again = parse_record(&to_ndjson_line("tree", &rec.sketch)).unwrap();
        assert_eq!(rec.sketch, again.sketch);
    }
}
