use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{ArtworkRecord, Certainty, CorpusError, Label};

const REQUIRED_COLUMNS: [&str; 6] = [
    "artwork_id",
    "title",
    "label",
    "certainty",
    "image_path",
    "px_per_mm",
];
const OPTIONAL_COLUMNS: [&str; 2] = ["width_px", "height_px"];

/// A manifest row before validation. CSV delivers every field as text while
/// the JSON form may carry numbers, hence the lenient scalar type.
#[derive(Debug, Deserialize)]
struct RawRow {
    artwork_id: Scalar,
    title: Scalar,
    label: Scalar,
    certainty: Scalar,
    image_path: Scalar,
    px_per_mm: Scalar,
    #[serde(default)]
    width_px: Option<Scalar>,
    #[serde(default)]
    height_px: Option<Scalar>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Scalar {
    Text(String),
    Number(serde_json::Number),
}

impl Scalar {
    fn text(&self) -> String {
        match self {
            Scalar::Text(s) => s.trim().to_string(),
            Scalar::Number(n) => n.to_string(),
        }
    }
}

/// Loads an artwork manifest (CSV with header, or a JSON array of objects
/// with the same field names).
///
/// Relative image paths resolve against `image_root`, or the manifest's own
/// directory when no root is given. The optional `width_px`/`height_px`
/// columns make the image header read unnecessary; otherwise dimensions come
/// from the image file.
pub fn load_manifest(path: &Path, image_root: Option<&Path>) -> Result<Vec<ArtworkRecord>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |reason: String| CorpusError::MalformedManifest {
        path: path.to_path_buf(),
        reason,
    };

    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || text.trim_start().starts_with('[');
    let rows: Vec<RawRow> = if is_json {
        serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?
    } else {
        read_csv_rows(&text).map_err(malformed)?
    };

    let root = image_root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let record = parse_row(row, &root).map_err(|reason| malformed(format!("row {}: {reason}", i + 1)))?;
        if !seen.insert(record.artwork_id.clone()) {
            return Err(CorpusError::DuplicateId(record.artwork_id));
        }
        records.push(record);
    }

    for record in &mut records {
        if !record.image_path.is_file() {
            return Err(CorpusError::MissingImageFile {
                artwork_id: record.artwork_id.clone(),
                path: record.image_path.clone(),
            });
        }
        if record.width_px == 0 {
            let (w, h) = image::image_dimensions(&record.image_path).map_err(|source| CorpusError::Image {
                path: record.image_path.clone(),
                source,
            })?;
            record.width_px = w;
            record.height_px = h;
        }
    }
    Ok(records)
}

fn read_csv_rows(text: &str) -> Result<Vec<RawRow>, String> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < REQUIRED_COLUMNS.len() || names[..REQUIRED_COLUMNS.len()] != REQUIRED_COLUMNS {
        return Err(format!("expected header {}, got {}", REQUIRED_COLUMNS.join(","), names.join(",")));
    }
    let extra = &names[REQUIRED_COLUMNS.len()..];
    if !extra.is_empty() && extra != OPTIONAL_COLUMNS {
        return Err(format!("unexpected columns {}", extra.join(",")));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| format!("row {}: {e}", i + 1)))
        .collect()
}

fn parse_row(row: RawRow, root: &Path) -> Result<ArtworkRecord, String> {
    let artwork_id = row.artwork_id.text();
    if artwork_id.is_empty() {
        return Err("empty artwork_id".into());
    }
    let label = match row.label.text().to_ascii_lowercase().as_str() {
        "positive" => Label::Positive,
        "negative" => Label::Negative,
        other => return Err(format!("label must be positive or negative, got {other:?}")),
    };
    let certainty = match row.certainty.text().to_ascii_lowercase().as_str() {
        "1" => Certainty::Certain1,
        "disputed" => Certainty::Disputed,
        other => return Err(format!("certainty must be 1 or disputed, got {other:?}")),
    };
    let px_text = row.px_per_mm.text();
    let px_per_mm: f64 = px_text.parse().map_err(|_| format!("px_per_mm {px_text:?} is not a number"))?;
    if !(px_per_mm.is_finite() && px_per_mm > 0.0) {
        return Err(format!("px_per_mm must be positive, got {px_per_mm}"));
    }
    let dim = |v: Option<Scalar>, name: &str| -> Result<u32, String> {
        match v.map(|s| s.text()) {
            None => Ok(0),
            Some(s) if s.is_empty() => Ok(0),
            Some(s) => match s.parse::<u32>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(format!("{name} must be a positive integer, got {s:?}")),
            },
        }
    };
    let width_px = dim(row.width_px, "width_px")?;
    let height_px = dim(row.height_px, "height_px")?;
    if (width_px == 0) != (height_px == 0) {
        return Err("width_px and height_px must be given together".into());
    }
    let image_path = PathBuf::from(row.image_path.text());
    let image_path = if image_path.is_absolute() {
        image_path
    } else {
        root.join(image_path)
    };
    Ok(ArtworkRecord {
        artwork_id,
        title: row.title.text(),
        label,
        certainty,
        image_path,
        px_per_mm,
        width_px,
        height_px,
    })
}
