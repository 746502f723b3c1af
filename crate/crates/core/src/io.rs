//! On-disk formats.
//!
//! Tensor file (`.sntf`), all integers little-endian:
//!
//! ```text
//! offset  size      field
//! 0       4         magic "SNTF"
//! 4       4         format version (u32) = 1
//! 8       4         mode count n (u32), n >= 1
//! 12      8·n       dims (u64 each)
//! 12+8n   8·∏dims   values, f64 IEEE-754, row-major
//! ```
//!
//! Model checkpoint (`.sntm`): magic "SNTM", version (u32), index length in
//! bytes (u64), a UTF-8 text index, then one 1-mode tensor frame per index
//! entry in index order. The index starts with header lines
//! (`strata`, `topic_rank`, `trailing_dims`, `sample_counts`, `strata_ranks`)
//! followed by one `<role> <stratum> <rank> <mode>` line per frame, where role
//! is `strata`, `coding` or `topic` and `-` marks a field that does not apply.
//!
//! Dataset manifest: one tensor path per line, relative to the manifest's
//! directory; blank lines and lines starting with `#` are skipped.
//!
//! Every writer goes through a temporary file in the target directory followed
//! by a rename, so readers never observe a partial file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Location, Result};
use crate::model::{ModelState, StratifiedDataset};
use crate::solver::LossTrace;
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"SNTF";
pub const MODEL_MAGIC: &[u8; 4] = b"SNTM";
pub const TENSOR_FORMAT_VERSION: u32 = 1;
pub const MODEL_FORMAT_VERSION: u32 = 1;

fn format_err(path: &Path, location: Location, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location,
        message: message.into(),
    }
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename,
/// creating missing parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn encode_tensor(x: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * x.ndim() + 8 * x.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.ndim() as u32).to_le_bytes());
    for &d in x.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in x.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: u64,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn offset(&self) -> Location {
        Location::Byte(self.base + self.pos as u64)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let remaining = self.bytes.len() - self.pos;
        if remaining < n {
            return Err(format_err(
                self.path,
                self.offset(),
                format!("truncated {what}: expected {n} bytes, found {remaining}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn decode_tensor_at(c: &mut Cursor<'_>) -> Result<DenseTensor> {
    let start = c.offset();
    let magic = c.take(4, "magic")?;
    if magic != TENSOR_MAGIC {
        return Err(format_err(c.path, start, format!("bad magic {magic:?}, expected \"SNTF\"")));
    }
    let at = c.offset();
    let version = c.u32("version")?;
    if version != TENSOR_FORMAT_VERSION {
        return Err(format_err(c.path, at, format!("unsupported tensor format version {version}")));
    }
    let at = c.offset();
    let n = c.u32("mode count")?;
    if n == 0 {
        return Err(format_err(c.path, at, "mode count must be at least 1"));
    }
    let mut shape = Vec::with_capacity(n as usize);
    let mut count: usize = 1;
    for m in 0..n {
        let at = c.offset();
        let d = c.u64("dims")?;
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| format_err(c.path, at, format!("invalid length {d} for mode {m}")))?;
        count = count
            .checked_mul(d)
            .filter(|c| c.checked_mul(8).is_some())
            .ok_or_else(|| format_err(c.path, at, "dims product overflows"))?;
        shape.push(d);
    }
    let payload = c.take(count * 8, "payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    DenseTensor::new(shape, data)
}

/// Decodes a tensor from a complete file image.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<DenseTensor> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        base: 0,
        path,
    };
    let t = decode_tensor_at(&mut c)?;
    if c.pos != bytes.len() {
        return Err(format_err(
            path,
            c.offset(),
            format!("{} unexpected trailing bytes", bytes.len() - c.pos),
        ));
    }
    Ok(t)
}

pub fn write_tensor(path: impl AsRef<Path>, x: &DenseTensor) -> Result<()> {
    write_atomic(path.as_ref(), &encode_tensor(x))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, path)
}

/// Loads every tensor listed in a manifest, in listed order.
pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<StratifiedDataset> {
    let manifest = manifest.as_ref();
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut strata: Vec<(usize, PathBuf, DenseTensor)> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let path = dir.join(line);
        let t = read_tensor(&path)?;
        if t.ndim() < 2 {
            return Err(format_err(
                manifest,
                Location::Line(no + 1),
                format!("{} is a {}-mode tensor; strata need at least 2 modes", path.display(), t.ndim()),
            ));
        }
        if let Some((_, first_path, first)) = strata.first() {
            if t.shape()[1..] != first.shape()[1..] {
                return Err(format_err(
                    manifest,
                    Location::Line(no + 1),
                    format!(
                        "stratum {} ({}) has shape {:?}, incompatible with stratum 1 ({}) of shape {:?}",
                        strata.len() + 1,
                        path.display(),
                        t.shape(),
                        first_path.display(),
                        first.shape()
                    ),
                ));
            }
        }
        strata.push((no + 1, path, t));
    }
    if strata.is_empty() {
        return Err(format_err(manifest, Location::Line(1), "manifest lists no strata"));
    }
    StratifiedDataset::new(strata.into_iter().map(|(_, _, t)| t).collect())
}

/// Writes each stratum as `stratum_<i>.sntf` next to `manifest`, then the manifest.
pub fn save_dataset(manifest: impl AsRef<Path>, dataset: &StratifiedDataset) -> Result<Vec<PathBuf>> {
    let manifest = manifest.as_ref();
    let dir = manifest.parent().unwrap_or(Path::new(""));
    let mut text = String::from("# one stratum tensor per line, relative to this file\n");
    let mut written = Vec::new();
    for (i, t) in dataset.strata().iter().enumerate() {
        let name = format!("stratum_{i}.sntf");
        let path = dir.join(&name);
        write_tensor(&path, t)?;
        text.push_str(&name);
        text.push('\n');
        written.push(path);
    }
    write_atomic(manifest, text.as_bytes())?;
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PgmScale {
    /// Map `[0, max entry]` onto `[0, 255]`.
    Auto,
    /// Map `[0, max]` onto `[0, 255]`, clamping larger values.
    Fixed(f64),
}

/// Binary (P5) 8-bit PGM bytes for a 2-mode tensor (rows × columns).
pub fn encode_pgm(image: &DenseTensor, scale: PgmScale) -> Result<Vec<u8>> {
    if image.ndim() != 2 {
        return Err(Error::invalid(format!(
            "PGM export needs a 2-mode tensor, got shape {:?}",
            image.shape()
        )));
    }
    if !image.is_non_negative() {
        return Err(Error::invalid("PGM export needs non-negative values"));
    }
    let max = match scale {
        PgmScale::Auto => image.data().iter().copied().fold(0.0, f64::max),
        PgmScale::Fixed(m) if m > 0.0 && m.is_finite() => m,
        PgmScale::Fixed(m) => return Err(Error::invalid(format!("invalid fixed scale {m}"))),
    };
    let (rows, cols) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| {
        if max == 0.0 {
            0
        } else {
            (v.min(max) / max * 255.0 + 0.5).floor().min(255.0) as u8
        }
    }));
    Ok(out)
}

pub fn export_pgm(image: &DenseTensor, path: impl AsRef<Path>, scale: PgmScale) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(image, scale)?)
}

pub const LOSS_CSV_HEADER: &str = "iteration,objective,seconds";

pub fn encode_loss_csv(trace: &LossTrace) -> Result<String> {
    if trace.is_empty() {
        return Err(Error::invalid("cannot export an empty loss trace"));
    }
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in trace.records() {
        writeln!(s, "{},{:.16e},{:.6}", r.iteration, r.objective, r.seconds).unwrap();
    }
    Ok(s)
}

pub fn export_loss_csv(trace: &LossTrace, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), encode_loss_csv(trace)?.as_bytes())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn encode_model(model: &ModelState) -> Result<Vec<u8>> {
    model.check_consistent()?;
    let mut index = String::from("# strat-ntf model index\n");
    writeln!(index, "strata {}", model.num_strata()).unwrap();
    writeln!(index, "topic_rank {}", model.topic_rank()).unwrap();
    writeln!(index, "trailing_dims {}", join(&model.trailing_dims())).unwrap();
    writeln!(index, "sample_counts {}", join(&model.sample_counts())).unwrap();
    writeln!(index, "strata_ranks {}", join(&model.strata_ranks())).unwrap();
    let mut frames = Vec::new();
    let mut push = |line: String, v: &[f64]| {
        index.push_str(&line);
        index.push('\n');
        let t = DenseTensor::new(vec![v.len()], v.to_vec()).expect("factor vectors are non-empty");
        frames.extend(encode_tensor(&t));
    };
    for (i, comps) in model.strata.iter().enumerate() {
        for (l, comp) in comps.iter().enumerate() {
            for (m, v) in comp.iter().enumerate() {
                push(format!("strata {i} {l} {}", m + 1), v);
            }
        }
    }
    for (i, ws) in model.codings.iter().enumerate() {
        for (l, w) in ws.iter().enumerate() {
            push(format!("coding {i} {l} -"), w);
        }
    }
    for (l, topic) in model.topics.iter().enumerate() {
        for (m, v) in topic.iter().enumerate() {
            push(format!("topic - {l} {}", m + 1), v);
        }
    }
    let mut out = Vec::with_capacity(16 + index.len() + frames.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    out.extend_from_slice(index.as_bytes());
    out.extend(frames);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EntryKey {
    Strata { stratum: usize, rank: usize, mode: usize },
    Coding { stratum: usize, rank: usize },
    Topic { rank: usize, mode: usize },
}

#[derive(Default)]
struct IndexHeader {
    strata: Option<usize>,
    topic_rank: Option<usize>,
    trailing_dims: Option<Vec<usize>>,
    sample_counts: Option<Vec<usize>>,
    strata_ranks: Option<Vec<usize>>,
}

fn parse_index(text: &str, path: &Path) -> Result<(IndexHeader, Vec<(usize, EntryKey)>)> {
    let mut header = IndexHeader::default();
    let mut entries = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let bad = |msg: String| format_err(path, Location::Line(line_no), msg);
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("expected an integer, got {s:?}")));
        let list = |s: &str| -> Result<Vec<usize>> {
            if s.is_empty() {
                return Ok(Vec::new());
            }
            s.split(',').map(num).collect()
        };
        match fields.as_slice() {
            ["strata", n] => header.strata = Some(num(n)?),
            ["topic_rank", n] => header.topic_rank = Some(num(n)?),
            ["trailing_dims", v] => header.trailing_dims = Some(list(v)?),
            ["sample_counts", v] => header.sample_counts = Some(list(v)?),
            ["strata_ranks", v] => header.strata_ranks = Some(list(v)?),
            ["strata_ranks"] => header.strata_ranks = Some(Vec::new()),
            ["strata", i, l, m] => entries.push((
                line_no,
                EntryKey::Strata {
                    stratum: num(i)?,
                    rank: num(l)?,
                    mode: num(m)?,
                },
            )),
            ["coding", i, l, "-"] => entries.push((
                line_no,
                EntryKey::Coding {
                    stratum: num(i)?,
                    rank: num(l)?,
                },
            )),
            ["topic", "-", l, m] => entries.push((
                line_no,
                EntryKey::Topic {
                    rank: num(l)?,
                    mode: num(m)?,
                },
            )),
            _ => return Err(bad(format!("unrecognized index line {line:?}"))),
        }
    }
    Ok((header, entries))
}

pub fn decode_model(bytes: &[u8], path: &Path) -> Result<ModelState> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        base: 0,
        path,
    };
    let magic = c.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(format_err(path, Location::Byte(0), format!("bad magic {magic:?}, expected \"SNTM\"")));
    }
    let at = c.offset();
    let version = c.u32("version")?;
    if version != MODEL_FORMAT_VERSION {
        return Err(format_err(path, at, format!("unsupported model format version {version}")));
    }
    let at = c.offset();
    let index_len = usize::try_from(c.u64("index length")?)
        .map_err(|_| format_err(path, at, "index length overflows"))?;
    let index_bytes = c.take(index_len, "index")?;
    let index = std::str::from_utf8(index_bytes)
        .map_err(|e| format_err(path, at, format!("index is not UTF-8: {e}")))?;
    let (header, entries) = parse_index(index, path)?;

    let missing = |what: &str| format_err(path, Location::Line(1), format!("index header lacks {what}"));
    let s = header.strata.ok_or_else(|| missing("strata"))?;
    let r = header.topic_rank.ok_or_else(|| missing("topic_rank"))?;
    let dims = header.trailing_dims.ok_or_else(|| missing("trailing_dims"))?;
    let samples = header.sample_counts.ok_or_else(|| missing("sample_counts"))?;
    let ranks = header.strata_ranks.ok_or_else(|| missing("strata_ranks"))?;
    if s == 0 || r == 0 || dims.is_empty() || samples.len() != s || ranks.len() != s {
        return Err(format_err(path, Location::Line(1), "index header is inconsistent"));
    }

    let mut frames: BTreeMap<EntryKey, Vec<f64>> = BTreeMap::new();
    for &(line, key) in &entries {
        let bad = |msg: &str| format_err(path, Location::Line(line), msg.to_string());
        let expected_len = match key {
            EntryKey::Strata { stratum, rank, mode } => {
                if stratum >= s || rank >= ranks[stratum] || mode == 0 || mode > dims.len() {
                    return Err(bad("strata entry out of range"));
                }
                dims[mode - 1]
            }
            EntryKey::Coding { stratum, rank } => {
                if stratum >= s || rank >= r {
                    return Err(bad("coding entry out of range"));
                }
                samples[stratum]
            }
            EntryKey::Topic { rank, mode } => {
                if rank >= r || mode == 0 || mode > dims.len() {
                    return Err(bad("topic entry out of range"));
                }
                dims[mode - 1]
            }
        };
        if c.pos == bytes.len() {
            return Err(format_err(
                path,
                c.offset(),
                format!("index lists {} entries but the payload ends after {}", entries.len(), frames.len()),
            ));
        }
        let t = decode_tensor_at(&mut c)?;
        if t.ndim() != 1 || t.len() != expected_len {
            return Err(bad(&format!(
                "frame has shape {:?}, expected [{expected_len}]",
                t.shape()
            )));
        }
        if frames.insert(key, t.into_data()).is_some() {
            return Err(bad("duplicate index entry"));
        }
    }
    if c.pos != bytes.len() {
        return Err(format_err(
            path,
            c.offset(),
            "payload holds more frames than the index lists",
        ));
    }
    let mut take = |key: EntryKey| {
        frames
            .remove(&key)
            .ok_or_else(|| format_err(path, Location::Line(1), format!("index is missing entry {key:?}")))
    };
    let mut strata = Vec::with_capacity(s);
    for (i, &rp) in ranks.iter().enumerate() {
        let mut comps = Vec::with_capacity(rp);
        for l in 0..rp {
            comps.push(
                (1..=dims.len())
                    .map(|mode| take(EntryKey::Strata { stratum: i, rank: l, mode }))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        strata.push(comps);
    }
    let codings = (0..s)
        .map(|i| (0..r).map(|l| take(EntryKey::Coding { stratum: i, rank: l })).collect())
        .collect::<Result<Vec<_>>>()?;
    let topics = (0..r)
        .map(|l| (1..=dims.len()).map(|mode| take(EntryKey::Topic { rank: l, mode })).collect())
        .collect::<Result<Vec<_>>>()?;
    let model = ModelState {
        strata,
        codings,
        topics,
    };
    model.check_consistent()?;
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelState) -> Result<()> {
    write_atomic(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes, path)
}
