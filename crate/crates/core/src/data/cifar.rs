//! CIFAR-10 and CIFAR-100 binary formats.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes (the red,
//! green and blue 32×32 planes, each row-major). CIFAR-100 records carry a
//! coarse and a fine label byte before the same pixel block.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor4};

use super::{Dataset, Split};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const TRAIN_RECORDS: usize = 50_000;
pub const TEST_RECORDS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn name(&self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "cifar10",
            CifarKind::Cifar100 => "cifar100",
        }
    }

    pub fn label_bytes(&self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_len(&self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }

    pub fn class_count(&self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    pub fn train_files(&self) -> &'static [&'static str] {
        match self {
            CifarKind::Cifar10 => &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarKind::Cifar100 => &["train.bin"],
        }
    }

    pub fn test_file(&self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "test_batch.bin",
            CifarKind::Cifar100 => "test.bin",
        }
    }

    /// Directory name used by the official archives.
    fn archive_dir(&self) -> &'static str {
        match self {
            CifarKind::Cifar10 => "cifar-10-batches-bin",
            CifarKind::Cifar100 => "cifar-100-binary",
        }
    }

    /// `dir` itself, or the archive's folder inside it if that is where the files are.
    pub fn resolve_dir(&self, dir: &Path) -> PathBuf {
        let nested = dir.join(self.archive_dir());
        if !dir.join(self.test_file()).exists() && nested.join(self.test_file()).exists() {
            nested
        } else {
            dir.to_path_buf()
        }
    }

    /// Labels of one record: (fine, coarse). Fails on out-of-range bytes.
    fn labels(&self, record: &[u8]) -> std::result::Result<(usize, Option<usize>), String> {
        match self {
            CifarKind::Cifar10 => {
                let l = record[0] as usize;
                if l > 9 {
                    return Err(format!("label byte {l} > 9"));
                }
                Ok((l, None))
            }
            CifarKind::Cifar100 => {
                let (coarse, fine) = (record[0] as usize, record[1] as usize);
                if coarse > 19 {
                    return Err(format!("coarse label byte {coarse} > 19"));
                }
                if fine > 99 {
                    return Err(format!("fine label byte {fine} > 99"));
                }
                Ok((fine, Some(coarse)))
            }
        }
    }
}

#[derive(Debug, Default)]
struct Records {
    pixels: Vec<f64>,
    labels: Vec<usize>,
    coarse: Vec<usize>,
}

fn read_records(path: &Path, kind: CifarKind, limit: usize, into: &mut Records) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let stride = kind.record_len();
    if bytes.len() % stride != 0 {
        return Err(Error::format(
            path,
            format!(
                "length {} is not a multiple of the {stride}-byte record",
                bytes.len()
            ),
        ));
    }
    for (i, record) in bytes.chunks_exact(stride).take(limit).enumerate() {
        let (fine, coarse) = kind
            .labels(record)
            .map_err(|reason| Error::format(path, format!("record {i}: {reason}")))?;
        into.labels.push(fine);
        if let Some(c) = coarse {
            into.coarse.push(c);
        }
        into.pixels
            .extend(record[kind.label_bytes()..].iter().map(|&p| f64::from(p) / 255.0));
    }
    Ok(())
}

fn load_split(
    dir: &Path,
    kind: CifarKind,
    files: &[&str],
    split: Split,
    limit: Option<usize>,
) -> Result<Dataset> {
    let limit = limit.unwrap_or(usize::MAX);
    let mut records = Records::default();
    for file in files {
        let remaining = limit - records.labels.len();
        if remaining == 0 {
            break;
        }
        read_records(&dir.join(file), kind, remaining, &mut records)?;
    }
    let n = records.labels.len();
    if n == 0 {
        return Err(Error::format(dir, format!("no {} records found", kind.name())));
    }
    let images = Tensor4::from_parts(Shape4::new(n, 3, 32, 32)?, records.pixels);
    let mut ds = Dataset::new(images, records.labels, kind.class_count(), split)?;
    if kind == CifarKind::Cifar100 {
        ds.coarse_labels = Some(records.coarse);
    }
    Ok(ds)
}

/// Loads the train and test splits, optionally only their first records.
pub fn load_cifar(
    dir: &Path,
    kind: CifarKind,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let dir = kind.resolve_dir(dir);
    let train = load_split(&dir, kind, kind.train_files(), Split::Train, train_limit)?;
    let test = load_split(&dir, kind, &[kind.test_file()], Split::Test, test_limit)?;
    Ok((train, test))
}

pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_cifar(dir, CifarKind::Cifar10, None, None)
}

pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_cifar(dir, CifarKind::Cifar100, None, None)
}

/// Serialises image `i` of `ds` as one record. Pixels are rounded to the
/// nearest of the 256 levels, so loading a file and re-encoding it
/// reproduces the original bytes.
pub fn encode_record(kind: CifarKind, ds: &Dataset, i: usize) -> Result<Vec<u8>> {
    let s = ds.images.shape();
    if (s.channels, s.height, s.width) != (3, 32, 32) {
        return Err(Error::Shape(format!("records hold 3x32x32 images, got {s}")));
    }
    let mut out = Vec::with_capacity(kind.record_len());
    match kind {
        CifarKind::Cifar10 => out.push(ds.labels[i] as u8),
        CifarKind::Cifar100 => {
            let coarse = ds.coarse_labels.as_ref().map_or(0, |c| c[i]);
            out.push(coarse as u8);
            out.push(ds.labels[i] as u8);
        }
    }
    out.extend(
        ds.images
            .image(i)
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    Ok(out)
}

fn write_file(path: &Path, kind: CifarKind, ds: &Dataset, range: std::ops::Range<usize>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in range {
        w.write_all(&encode_record(kind, ds, i)?)
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `train` and `test` in the official file layout. CIFAR-10 training
/// records are spread evenly over the five batch files.
pub fn write_cifar(dir: &Path, kind: CifarKind, train: &Dataset, test: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = kind.train_files();
    let n = train.len();
    for (k, file) in files.iter().enumerate() {
        let range = n * k / files.len()..n * (k + 1) / files.len();
        write_file(&dir.join(file), kind, train, range)?;
    }
    write_file(&dir.join(kind.test_file()), kind, test, 0..test.len())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileReport {
    pub path: PathBuf,
    pub bytes: u64,
    pub records: usize,
    /// Why the file is invalid, if it is.
    pub problem: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyReport {
    pub kind: CifarKind,
    pub train: Vec<FileReport>,
    pub test: FileReport,
}

impl VerifyReport {
    pub fn train_records(&self) -> usize {
        self.train.iter().map(|f| f.records).sum()
    }

    pub fn test_records(&self) -> usize {
        self.test.records
    }

    pub fn files_ok(&self) -> bool {
        self.train.iter().chain([&self.test]).all(|f| f.problem.is_none())
    }

    /// Every file valid and the official 50,000/10,000 record counts.
    pub fn passed(&self) -> bool {
        self.files_ok() && self.train_records() == TRAIN_RECORDS && self.test_records() == TEST_RECORDS
    }
}

impl std::fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for file in self.train.iter().chain([&self.test]) {
            let status = file.problem.as_deref().unwrap_or("ok");
            writeln!(
                f,
                "{}  {} bytes  {} records  {status}",
                file.path.display(),
                file.bytes,
                file.records
            )?;
        }
        writeln!(
            f,
            "{}: train {} records (expected {TRAIN_RECORDS}), test {} records (expected {TEST_RECORDS}): {}",
            self.kind.name(),
            self.train_records(),
            self.test_records(),
            if self.passed() { "ok" } else { "INVALID" }
        )
    }
}

/// Streams through one file checking its length and every label byte.
fn verify_file(path: &Path, kind: CifarKind) -> FileReport {
    let mut report = FileReport {
        path: path.to_path_buf(),
        bytes: 0,
        records: 0,
        problem: None,
    };
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) => {
            report.problem = Some(format!("cannot open: {e}"));
            return report;
        }
    };
    report.bytes = file.metadata().map(|m| m.len()).unwrap_or(0);
    let stride = kind.record_len() as u64;
    if !report.bytes.is_multiple_of(stride) {
        report.problem = Some(format!(
            "length {} is not a multiple of the {stride}-byte record",
            report.bytes
        ));
        return report;
    }
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut record = vec![0u8; kind.record_len()];
    for i in 0..report.bytes / stride {
        if let Err(e) = reader.read_exact(&mut record) {
            report.problem = Some(format!("read failed at record {i}: {e}"));
            return report;
        }
        if let Err(reason) = kind.labels(&record) {
            report.problem = Some(format!("record {i}: {reason}"));
            return report;
        }
        report.records += 1;
    }
    report
}

/// Checks every file of the official layout without loading the images.
pub fn verify_cifar(dir: &Path, kind: CifarKind) -> VerifyReport {
    let dir = kind.resolve_dir(dir);
    VerifyReport {
        kind,
        train: kind
            .train_files()
            .iter()
            .map(|f| verify_file(&dir.join(f), kind))
            .collect(),
        test: verify_file(&dir.join(kind.test_file()), kind),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    fn tiny(kind: CifarKind, n: usize, seed: u64) -> Dataset {
        let mut ds = synthetic(n, kind.class_count(), 32, seed).unwrap();
        if kind == CifarKind::Cifar100 {
            ds.coarse_labels = Some(ds.labels.iter().map(|l| l / 5).collect());
        }
        ds
    }

    #[test]
    fn round_trip_reproduces_bytes() {
        for kind in [CifarKind::Cifar10, CifarKind::Cifar100] {
            let dir = tempfile::tempdir().unwrap();
            let (train, test) = (tiny(kind, 10, 1), tiny(kind, 4, 2));
            write_cifar(dir.path(), kind, &train, &test).unwrap();
            let (a, b) = load_cifar(dir.path(), kind, None, None).unwrap();
            assert_eq!(a.len(), 10);
            assert_eq!(b.len(), 4);
            assert_eq!(a.labels, train.labels);
            assert_eq!(a.images, train.images);
            let file = dir.path().join(kind.test_file());
            let original = fs::read(&file).unwrap();
            let mut again = Vec::new();
            for i in 0..b.len() {
                again.extend(encode_record(kind, &b, i).unwrap());
            }
            assert_eq!(again, original);
            if kind == CifarKind::Cifar100 {
                assert_eq!(a.coarse_labels, train.coarse_labels);
            }
        }
    }

    #[test]
    fn first_label_byte_is_first_label() {
        let dir = tempfile::tempdir().unwrap();
        let train = tiny(CifarKind::Cifar10, 5, 3);
        write_cifar(dir.path(), CifarKind::Cifar10, &train, &train).unwrap();
        let bytes = fs::read(dir.path().join("data_batch_1.bin")).unwrap();
        let (a, _) = load_cifar10(dir.path()).unwrap();
        assert_eq!(bytes[0] as usize, a.labels[0]);
        assert_eq!(f64::from(bytes[1]) / 255.0, a.images.data()[0]);
    }

    #[test]
    fn truncated_and_bad_label_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let train = tiny(CifarKind::Cifar10, 5, 3);
        write_cifar(dir.path(), CifarKind::Cifar10, &train, &train).unwrap();
        let test = dir.path().join("test_batch.bin");
        let mut bytes = fs::read(&test).unwrap();
        bytes.pop();
        fs::write(&test, &bytes).unwrap();
        assert!(matches!(load_cifar10(dir.path()), Err(Error::Format { .. })));
        let report = verify_cifar(dir.path(), CifarKind::Cifar10);
        assert!(report.test.problem.is_some());
        assert!(!report.passed());

        bytes.push(0);
        bytes[3073] = 10;
        fs::write(&test, &bytes).unwrap();
        let err = load_cifar10(dir.path()).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");
    }

    #[test]
    fn limits_and_nested_layout() {
        let root = tempfile::tempdir().unwrap();
        let dir = root.path().join("cifar-10-batches-bin");
        let train = tiny(CifarKind::Cifar10, 20, 4);
        write_cifar(&dir, CifarKind::Cifar10, &train, &train).unwrap();
        let (a, b) = load_cifar(root.path(), CifarKind::Cifar10, Some(7), Some(3)).unwrap();
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(a.labels, train.labels[..7]);
    }

    #[test]
    fn verify_counts_records_per_file() {
        let dir = tempfile::tempdir().unwrap();
        let train = tiny(CifarKind::Cifar10, 10, 5);
        write_cifar(dir.path(), CifarKind::Cifar10, &train, &train).unwrap();
        let report = verify_cifar(dir.path(), CifarKind::Cifar10);
        assert!(report.files_ok());
        assert_eq!(
            report.train.iter().map(|f| f.records).collect::<Vec<_>>(),
            vec![2; 5]
        );
        assert_eq!(report.train_records(), 10);
        assert!(!report.passed(), "counts differ from the official ones");
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let report = verify_cifar(dir.path(), CifarKind::Cifar100);
        assert!(!report.files_ok());
        assert!(matches!(load_cifar100(dir.path()), Err(Error::Io { .. })));
    }
}
