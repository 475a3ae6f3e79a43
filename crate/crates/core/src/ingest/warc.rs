//! Streaming WARC/WET reader and writer.
//!
//! Records are `WARC/x.y` CRLF, `Name: value` header lines, a blank line,
//! `Content-Length` payload bytes and a CRLF CRLF trailer. Gzip input is read
//! member by member so one corrupt member only costs the records inside it.

use std::io::{self, BufRead, BufReader, Read, Write};

use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WarcRecord {
    pub version: String,
    pub headers: Vec<(String, String)>,
    pub payload: Vec<u8>,
}

impl WarcRecord {
    pub fn new(record_type: &str, payload: impl Into<Vec<u8>>) -> Self {
        WarcRecord {
            version: "WARC/1.0".into(),
            headers: vec![("WARC-Type".into(), record_type.into())],
            payload: payload.into(),
        }
    }

    pub fn with_header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    /// Case-insensitive header lookup, first occurrence.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn record_type(&self) -> Option<&str> {
        self.header("WARC-Type")
    }
}

/// Per-record problems. The reader skips the record and carries on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RecordErrorKind {
    /// Header block not closed by a blank line.
    UnterminatedHeader,
    /// Content-Length missing, unparseable, or not ending at the record
    /// boundary.
    ContentLength,
    /// Gzip member failed to decompress or failed its checksum.
    CorruptGzip,
    /// Bytes between records that are not a version line.
    Garbage,
}

#[derive(Debug)]
pub enum ReadItem {
    Record(WarcRecord),
    Error(RecordErrorKind),
}

/// `BufRead` wrapper that can push bytes back in front of the stream.
struct Pushback<R> {
    inner: R,
    pending: Vec<u8>,
    pos: usize,
    /// Net bytes consumed so far (unread bytes are subtracted).
    offset: u64,
}

impl<R: BufRead> Pushback<R> {
    fn new(inner: R) -> Self {
        Pushback {
            inner,
            pending: Vec::new(),
            pos: 0,
            offset: 0,
        }
    }

    fn unread(&mut self, bytes: &[u8]) {
        self.offset -= bytes.len() as u64;
        let mut v = Vec::with_capacity(bytes.len() + self.pending.len() - self.pos);
        v.extend_from_slice(bytes);
        v.extend_from_slice(&self.pending[self.pos..]);
        self.pending = v;
        self.pos = 0;
    }

    fn read_line_bytes(&mut self, buf: &mut Vec<u8>) -> io::Result<usize> {
        buf.clear();
        self.read_until(b'\n', buf)
    }

    /// Reads up to `n` bytes; fewer only at end of stream.
    fn read_up_to(&mut self, n: usize) -> io::Result<Vec<u8>> {
        let mut out = Vec::with_capacity(n.min(1 << 20));
        self.by_ref().take(n as u64).read_to_end(&mut out)?;
        Ok(out)
    }

    fn at_eof(&mut self) -> io::Result<bool> {
        Ok(self.fill_buf()?.is_empty())
    }
}

impl<R: BufRead> Read for Pushback<R> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        let avail = self.fill_buf()?;
        let n = avail.len().min(out.len());
        out[..n].copy_from_slice(&avail[..n]);
        self.consume(n);
        Ok(n)
    }
}

impl<R: BufRead> BufRead for Pushback<R> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        if self.pos < self.pending.len() {
            Ok(&self.pending[self.pos..])
        } else {
            self.inner.fill_buf()
        }
    }

    fn consume(&mut self, amt: usize) {
        self.offset += amt as u64;
        if self.pos < self.pending.len() {
            self.pos += amt;
            if self.pos >= self.pending.len() {
                self.pending.clear();
                self.pos = 0;
            }
        } else {
            self.inner.consume(amt);
        }
    }
}

fn is_version_line(line: &[u8]) -> bool {
    let line = trim_eol(line);
    let Some(rest) = line.strip_prefix(b"WARC/") else {
        return false;
    };
    let mut parts = rest.splitn(2, |b| *b == b'.');
    let major = parts.next().unwrap_or_default();
    let minor = parts.next().unwrap_or_default();
    !major.is_empty()
        && !minor.is_empty()
        && major.iter().all(u8::is_ascii_digit)
        && minor.iter().all(u8::is_ascii_digit)
}

fn trim_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

/// Parses uncompressed records from a `BufRead`.
struct PlainParser<R> {
    src: Pushback<R>,
    line: Vec<u8>,
}

enum Step {
    Item(ReadItem),
    Eof,
    /// Stream does not start like a WARC file.
    NotWarc,
}

impl<R: BufRead> PlainParser<R> {
    fn new(src: R) -> Self {
        PlainParser {
            src: Pushback::new(src),
            line: Vec::new(),
        }
    }

    /// Skips ahead to the next version line, leaving it unread.
    fn resync(&mut self) -> io::Result<()> {
        loop {
            if self.src.read_line_bytes(&mut self.line)? == 0 {
                return Ok(());
            }
            if is_version_line(&self.line) {
                let line = std::mem::take(&mut self.line);
                self.src.unread(&line);
                return Ok(());
            }
        }
    }

    fn next_step(&mut self, first: bool) -> io::Result<Step> {
        // blank lines between records are tolerated
        loop {
            if self.src.read_line_bytes(&mut self.line)? == 0 {
                return Ok(Step::Eof);
            }
            if !trim_eol(&self.line).is_empty() {
                break;
            }
        }
        if !is_version_line(&self.line) {
            if first {
                return Ok(Step::NotWarc);
            }
            self.resync()?;
            return Ok(Step::Item(ReadItem::Error(RecordErrorKind::Garbage)));
        }
        let version = String::from_utf8_lossy(trim_eol(&self.line)).into_owned();

        let mut headers: Vec<(String, String)> = Vec::new();
        loop {
            if self.src.read_line_bytes(&mut self.line)? == 0 {
                return Ok(Step::Item(ReadItem::Error(RecordErrorKind::UnterminatedHeader)));
            }
            let body = trim_eol(&self.line);
            if body.is_empty() {
                break;
            }
            if is_version_line(&self.line) {
                let line = std::mem::take(&mut self.line);
                self.src.unread(&line);
                return Ok(Step::Item(ReadItem::Error(RecordErrorKind::UnterminatedHeader)));
            }
            if matches!(body.first(), Some(b' ' | b'\t')) {
                if let Some(last) = headers.last_mut() {
                    last.1.push(' ');
                    last.1.push_str(String::from_utf8_lossy(body).trim());
                    continue;
                }
            }
            let text = String::from_utf8_lossy(body);
            match text.split_once(':') {
                Some((k, v)) if !k.is_empty() && !k.contains(char::is_whitespace) => {
                    headers.push((k.to_owned(), v.trim().to_owned()));
                }
                _ => {
                    self.resync()?;
                    return Ok(Step::Item(ReadItem::Error(RecordErrorKind::UnterminatedHeader)));
                }
            }
        }

        let length = headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("Content-Length"))
            .and_then(|(_, v)| v.parse::<usize>().ok());
        let Some(length) = length else {
            self.resync()?;
            return Ok(Step::Item(ReadItem::Error(RecordErrorKind::ContentLength)));
        };
        let payload = self.src.read_up_to(length)?;
        if payload.len() < length {
            self.src.unread(&payload);
            self.resync()?;
            return Ok(Step::Item(ReadItem::Error(RecordErrorKind::ContentLength)));
        }
        let trailer = self.src.read_up_to(4)?;
        // a missing trailer is accepted only at end of stream
        if trailer != b"\r\n\r\n" && !(trailer.is_empty() && self.src.at_eof()?) {
            self.src.unread(&trailer);
            self.src.unread(&payload);
            self.resync()?;
            return Ok(Step::Item(ReadItem::Error(RecordErrorKind::ContentLength)));
        }
        let headers = headers
            .into_iter()
            .filter(|(k, _)| !k.eq_ignore_ascii_case("Content-Length"))
            .collect();
        Ok(Step::Item(ReadItem::Record(WarcRecord {
            version,
            headers,
            payload,
        })))
    }
}

const GZIP_MAGIC: [u8; 3] = [0x1f, 0x8b, 0x08];

enum Mode<R: BufRead> {
    Plain(PlainParser<R>),
    Gzip {
        src: Pushback<R>,
        member: Option<PlainParser<io::Cursor<Vec<u8>>>>,
    },
}

/// Iterator over records of a (possibly gzip-compressed) WARC stream.
///
/// Yields `Ok(ReadItem)` for records and per-record errors; a stream that is
/// not WARC at all yields one fatal `Err` and then ends.
pub struct WarcReader<R: BufRead> {
    mode: Option<Mode<R>>,
    started: bool,
}

impl<R: Read> WarcReader<BufReader<R>> {
    pub fn new(reader: R) -> Self {
        Self::from_bufread(BufReader::with_capacity(1 << 16, reader))
    }
}

impl<R: BufRead> WarcReader<R> {
    pub fn from_bufread(reader: R) -> Self {
        WarcReader {
            mode: None,
            started: false,
        }
        .with_source(reader)
    }

    fn with_source(mut self, reader: R) -> Self {
        let mut src = Pushback::new(reader);
        let is_gzip = match src.fill_buf() {
            Ok(buf) => buf.starts_with(&GZIP_MAGIC[..2]),
            Err(_) => false,
        };
        self.mode = Some(if is_gzip {
            Mode::Gzip { src, member: None }
        } else {
            Mode::Plain(PlainParser { src, line: Vec::new() })
        });
        self
    }

    fn fatal(&mut self, msg: &str) -> Option<Result<ReadItem>> {
        self.mode = None;
        Some(Err(Error::Format(msg.into())))
    }
}

/// Scans forward to the next gzip member header, leaving it unread.
fn seek_gzip_member<R: BufRead>(src: &mut Pushback<R>) -> io::Result<()> {
    loop {
        let buf = src.fill_buf()?;
        if buf.is_empty() {
            return Ok(());
        }
        if let Some(i) = buf.iter().position(|&b| b == GZIP_MAGIC[0]) {
            src.consume(i);
            let head = src.read_up_to(3)?;
            let found = head == GZIP_MAGIC;
            src.unread(&head);
            if found {
                return Ok(());
            }
            src.consume(1);
        } else {
            let n = buf.len();
            src.consume(n);
        }
    }
}

impl<R: BufRead> Iterator for WarcReader<R> {
    type Item = Result<ReadItem>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = !self.started;
        self.started = true;
        loop {
            let mode = self.mode.as_mut()?;
            match mode {
                Mode::Plain(parser) => {
                    return match parser.next_step(first) {
                        Ok(Step::Item(item)) => Some(Ok(item)),
                        Ok(Step::Eof) => {
                            if first {
                                return self.fatal("empty stream is not a WARC file");
                            }
                            self.mode = None;
                            None
                        }
                        Ok(Step::NotWarc) => self.fatal("stream does not start with a WARC version line"),
                        Err(e) => {
                            self.mode = None;
                            Some(Err(e.into()))
                        }
                    };
                }
                Mode::Gzip { src, member } => {
                    if let Some(parser) = member {
                        match parser.next_step(false) {
                            Ok(Step::Item(item)) => return Some(Ok(item)),
                            Ok(Step::Eof) => {
                                *member = None;
                                continue;
                            }
                            Ok(Step::NotWarc) => unreachable!("only the first step reports NotWarc"),
                            Err(e) => return Some(Err(e.into())),
                        }
                    }
                    match src.at_eof() {
                        Ok(true) => {
                            self.mode = None;
                            return None;
                        }
                        Ok(false) => {}
                        Err(e) => return Some(Err(e.into())),
                    }
                    let mut data = Vec::new();
                    let member_start = src.offset;
                    let decoded = flate2::bufread::GzDecoder::new(&mut *src).read_to_end(&mut data);
                    if decoded.is_err() {
                        // always make progress past a member that failed at its first byte
                        if src.offset == member_start {
                            src.consume(1);
                        }
                        if let Err(e) = seek_gzip_member(src) {
                            return Some(Err(e.into()));
                        }
                        return Some(Ok(ReadItem::Error(RecordErrorKind::CorruptGzip)));
                    }
                    let mut parser = PlainParser::new(io::Cursor::new(data));
                    match parser.next_step(first) {
                        Ok(Step::NotWarc) => return self.fatal("gzip stream does not contain WARC records"),
                        Ok(Step::Item(item)) => {
                            *member = Some(parser);
                            return Some(Ok(item));
                        }
                        Ok(Step::Eof) => continue,
                        Err(e) => return Some(Err(e.into())),
                    }
                }
            }
        }
    }
}

/// Writes records, optionally one gzip member per record.
pub struct WarcWriter<W: Write> {
    out: W,
    gzip: bool,
}

impl<W: Write> WarcWriter<W> {
    pub fn new(out: W, gzip: bool) -> Self {
        WarcWriter { out, gzip }
    }

    pub fn write(&mut self, record: &WarcRecord) -> io::Result<()> {
        let bytes = encode_record(record);
        if self.gzip {
            let mut enc = GzEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&bytes)?;
            self.out.write_all(&enc.finish()?)
        } else {
            self.out.write_all(&bytes)
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Uncompressed bytes of one record. `Content-Length` is always derived from
/// the payload.
pub fn encode_record(record: &WarcRecord) -> Vec<u8> {
    let mut out = Vec::with_capacity(record.payload.len() + 256);
    out.extend_from_slice(record.version.as_bytes());
    out.extend_from_slice(b"\r\n");
    for (k, v) in &record.headers {
        if k.eq_ignore_ascii_case("Content-Length") {
            continue;
        }
        out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
    }
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", record.payload.len()).as_bytes());
    out.extend_from_slice(&record.payload);
    out.extend_from_slice(b"\r\n\r\n");
    out
}
