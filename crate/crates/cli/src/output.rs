//! Number formatting, CSV emission and atomic file writes.

use std::io::{self, Write};
use std::path::Path;

use tempfile::NamedTempFile;

/// Shortest decimal string that parses back to exactly `v`.
///
/// Plain notation is used for magnitudes in `[1e-5, 1e16)` and zero,
/// scientific notation otherwise.
pub fn fmt_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !a.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Builds CSV text with `\n` line endings.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> io::Result<Self> {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(CsvTable { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> io::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn numbers(&mut self, values: &[f64]) -> io::Result<()> {
        self.row(values.iter().map(|&v| fmt_float(v)))
    }

    pub fn finish(self) -> io::Result<Vec<u8>> {
        self.writer
            .into_inner()
            .map_err(|e| io::Error::other(e.to_string()))
    }
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [
            0.0,
            0.5,
            1e-5,
            11.0 / 16.0,
            2.0f64.sqrt(),
            1e-300,
            -3.5e20,
            1e16,
            9.999e-6,
        ] {
            let s = fmt_float(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_float(0.5), "0.5");
        assert_eq!(fmt_float(0.0), "0");
        assert_eq!(fmt_float(2.0), "2");
        assert_eq!(fmt_float(2.5e-13), "2.5e-13");
    }

    #[test]
    fn csv_uses_newlines() {
        let mut t = CsvTable::new(&["a", "b"]).unwrap();
        t.numbers(&[1.0, 0.25]).unwrap();
        assert_eq!(
            String::from_utf8(t.finish().unwrap()).unwrap(),
            "a,b\n1,0.25\n"
        );
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
