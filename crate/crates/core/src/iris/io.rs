//! Image and manifest files.
//!
//! Images are 8-bit grayscale, 128×128, stored as binary PGM (`P5`) or
//! grayscale PNG. A manifest is a UTF-8 CSV with header `path,label,split`;
//! leading `#` lines may carry `key=value` pairs (`mean`, `std`) with the
//! dataset intensity statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NormalizedIris, NORM_SIZE};
use crate::error::{Error, Result};

/// Quantizes `[0, 1]` intensities to bytes.
pub fn to_bytes(img: &NormalizedIris) -> Vec<u8> {
    img.pixels
        .iter()
        .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<NormalizedIris> {
    NormalizedIris::new(
        height,
        width,
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

pub fn encode_pgm(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, bytes)).map_err(|e| Error::io(path, e))
}

/// Parses a binary 8-bit PGM, returning `(width, height, pixels)`.
pub fn decode_pgm(path: &Path, raw: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::parse(path, None, msg.to_string());
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < raw.len() && raw[pos] == b'#' {
            while pos < raw.len() && raw[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields
            .push(std::str::from_utf8(&raw[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary grayscale PGM (expected P5)"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("bad number in PGM header"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PGM (maxval 255) is supported"));
    }
    pos += 1;
    let body = raw
        .get(pos..pos + w * h)
        .ok_or_else(|| bad("truncated PGM pixel data"))?;
    Ok((w, h, body.to_vec()))
}

fn decode_png(path: &Path, raw: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(raw, image::ImageFormat::Png)
        .map_err(|e| Error::parse(path, None, format!("PNG decode failed: {e}")))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            Ok((w as usize, h as usize, g.into_raw()))
        }
        other => Err(Error::parse(
            path,
            None,
            format!("expected 8-bit grayscale PNG, found {:?}", other.color()),
        )),
    }
}

/// Loads a 128×128 8-bit grayscale image (PGM or PNG) as intensities in
/// `[0, 1]`.
pub fn load_normalized(path: &Path) -> Result<NormalizedIris> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, bytes) = if raw.starts_with(b"\x89PNG") {
        decode_png(path, &raw)?
    } else {
        decode_pgm(path, &raw)?
    };
    if (w, h) != (NORM_SIZE, NORM_SIZE) {
        return Err(Error::parse(
            path,
            None,
            format!("image is {w}x{h}, expected {NORM_SIZE}x{NORM_SIZE}"),
        ));
    }
    from_bytes(w, h, &bytes)
}

/// Writes an image as PGM, or PNG when the extension is `.png`.
pub fn save_normalized(path: &Path, img: &NormalizedIris) -> Result<()> {
    let bytes = to_bytes(img);
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        image::GrayImage::from_raw(img.width as u32, img.height as u32, bytes)
            .expect("sized buffer")
            .save(path)
            .map_err(|e| Error::parse(path, None, format!("PNG encode failed: {e}")))
    } else {
        write_pgm(path, img.width, img.height, &bytes)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Deserialize)]
struct RawRecord {
    path: String,
    label: String,
    split: String,
}

impl DatasetManifest {
    /// Checks that labels are dense `0..K` over the whole manifest and that
    /// no label appears in both splits.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut by_split: BTreeMap<Split, BTreeSet<usize>> = BTreeMap::new();
        for r in &self.records {
            by_split.entry(r.split).or_default().insert(r.label);
        }
        let train = by_split.get(&Split::Train).cloned().unwrap_or_default();
        let test = by_split.get(&Split::Test).cloned().unwrap_or_default();
        if let Some(shared) = train.intersection(&test).next() {
            return Err(Error::parse(
                path,
                None,
                format!("class {shared} appears in both train and test splits"),
            ));
        }
        let all: BTreeSet<usize> = train.union(&test).copied().collect();
        if let Some((expected, found)) = all.iter().enumerate().find(|(i, l)| *i != **l) {
            return Err(Error::parse(
                path,
                None,
                format!(
                    "labels must be dense 0..K-1: label {expected} is missing (next is {found})"
                ),
            ));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Sorted distinct labels of a split.
    pub fn classes(&self, split: Split) -> Vec<usize> {
        let set: BTreeSet<usize> = self.split(split).map(|r| r.label).collect();
        set.into_iter().collect()
    }

    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            self.root.join(&record.path)
        }
    }

    /// Loads every image of a split with its class id attached.
    pub fn load_split(&self, split: Split) -> Result<Vec<NormalizedIris>> {
        self.split(split)
            .map(|r| load_normalized(&self.resolve(r)).map(|img| img.with_class(r.label)))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let (Some(m), Some(s)) = (self.mean, self.std) {
            out.push_str(&format!("# mean={m}\n# std={s}\n"));
        }
        out.push_str("path,label,split\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{}\n",
                r.path.display(),
                r.label,
                r.split.as_str()
            ));
        }
        out
    }
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<DatasetManifest> {
    let mut mean = None;
    let mut std = None;
    let mut body_start = 0;
    let mut header_line = 1;
    for line in text.lines() {
        let Some(comment) = line.trim_start().strip_prefix('#') else {
            break;
        };
        for kv in comment.split(|c: char| c == ',' || c.is_whitespace()) {
            let Some((k, v)) = kv.split_once('=') else {
                continue;
            };
            let parsed = v.trim().parse::<f64>().map_err(|_| {
                Error::parse(
                    path,
                    Some(header_line),
                    format!("bad value for `{}`", k.trim()),
                )
            })?;
            match k.trim() {
                "mean" => mean = Some(parsed),
                "std" => std = Some(parsed),
                _ => {}
            }
        }
        body_start += line.len() + 1;
        header_line += 1;
    }
    let body = text.get(body_start.min(text.len())..).unwrap_or("");
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, Some(header_line), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(Error::parse(
            path,
            Some(header_line),
            format!(
                "header must be `path,label,split`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in reader.deserialize::<RawRecord>().enumerate() {
        let line = header_line + 1 + i;
        let raw = row.map_err(|e| Error::parse(path, Some(line), e.to_string()))?;
        let label = raw.label.parse::<usize>().map_err(|_| {
            Error::parse(path, Some(line), format!("unknown label `{}`", raw.label))
        })?;
        let split = match raw.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::parse(
                    path,
                    Some(line),
                    format!("unknown split `{other}`"),
                ));
            }
        };
        records.push(ManifestRecord {
            path: PathBuf::from(raw.path),
            label,
            split,
        });
    }
    let manifest = DatasetManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
        mean,
        std,
    };
    manifest.validate(path)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(path, &text)
}
