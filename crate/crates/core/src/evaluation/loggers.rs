use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{MetricRecord, MetricsError};

pub const CSV_HEADER: [&str; 5] = [
    "global_step",
    "experience_index",
    "phase",
    "metric_name",
    "value",
];

/// Destination for metric records.
pub trait MetricSink: Send {
    fn write(&mut self, record: &MetricRecord) -> Result<(), MetricsError>;

    fn flush(&mut self) -> Result<(), MetricsError> {
        Ok(())
    }
}

/// Human-readable lines, values rounded to 4 decimals.
pub struct StdoutLogger<W: Write + Send = io::Stdout> {
    out: W,
}

impl StdoutLogger<io::Stdout> {
    pub fn new() -> Self {
        StdoutLogger { out: io::stdout() }
    }
}

impl Default for StdoutLogger<io::Stdout> {
    fn default() -> Self {
        StdoutLogger::new()
    }
}

impl<W: Write + Send> StdoutLogger<W> {
    pub fn to_writer(out: W) -> Self {
        StdoutLogger { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> MetricSink for StdoutLogger<W> {
    fn write(&mut self, r: &MetricRecord) -> Result<(), MetricsError> {
        writeln!(
            self.out,
            "[{}] exp {} step {} {} = {:.4}",
            r.phase, r.experience_index, r.global_step, r.metric_name, r.value
        )?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        self.out.flush()?;
        Ok(())
    }
}

/// One JSON object per line.
pub struct JsonlLogger<W: Write + Send = BufWriter<File>> {
    out: W,
}

impl JsonlLogger<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        Ok(JsonlLogger {
            out: BufWriter::new(File::create(path)?),
        })
    }
}

impl<W: Write + Send> JsonlLogger<W> {
    pub fn to_writer(out: W) -> Self {
        JsonlLogger { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> MetricSink for JsonlLogger<W> {
    fn write(&mut self, r: &MetricRecord) -> Result<(), MetricsError> {
        serde_json::to_writer(&mut self.out, r).map_err(io::Error::from)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        self.out.flush()?;
        Ok(())
    }
}

/// RFC 4180 CSV with a fixed header row.
pub struct CsvLogger<W: Write + Send = File> {
    out: csv::Writer<W>,
}

impl CsvLogger<File> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, MetricsError> {
        CsvLogger::to_writer(File::create(path)?)
    }
}

impl<W: Write + Send> CsvLogger<W> {
    pub fn to_writer(out: W) -> Result<Self, MetricsError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        out.write_record(CSV_HEADER)?;
        Ok(CsvLogger { out })
    }

    pub fn into_inner(self) -> Result<W, MetricsError> {
        self.out
            .into_inner()
            .map_err(|e| MetricsError::Io(io::Error::other(e.to_string())))
    }
}

impl<W: Write + Send> MetricSink for CsvLogger<W> {
    fn write(&mut self, r: &MetricRecord) -> Result<(), MetricsError> {
        self.out.serialize(r)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), MetricsError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Parse a JSONL metrics stream. Blank lines are skipped.
pub fn read_jsonl<R: io::Read>(input: R) -> Result<Vec<MetricRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| MetricsError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Parse CSV written by [`CsvLogger`].
pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<MetricRecord>, MetricsError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(MetricsError::Csv(csv::Error::from(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected header {headers:?}"),
        ))));
    }
    rdr.deserialize()
        .collect::<Result<Vec<MetricRecord>, _>>()
        .map_err(MetricsError::from)
}
