//! Binary (`EVT1`) and CSV event files.
//!
//! Binary layout, little-endian: a 16-byte header (`EVT1`, width u16,
//! height u16, record count u64) followed by 14-byte records
//! (x u16, y u16, t u64 µs, p i8, pad u8).

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ee3d_core::event::{Event, EventStream, Polarity};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"EVT1";
/// Header count of a stream whose length is not known up front; it ends
/// at a clean end of input.
pub const UNBOUNDED: u64 = u64::MAX;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventHeader {
    pub width: u16,
    pub height: u16,
    pub count: u64,
}

impl EventHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..6].copy_from_slice(&self.width.to_le_bytes());
        b[6..8].copy_from_slice(&self.height.to_le_bytes());
        b[8..].copy_from_slice(&self.count.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; HEADER_LEN]) -> Result<Self> {
        if &b[..4] != MAGIC {
            return Err(Error::format("not an EVT1 event file"));
        }
        let header = EventHeader {
            width: u16::from_le_bytes([b[4], b[5]]),
            height: u16::from_le_bytes([b[6], b[7]]),
            count: u64::from_le_bytes(b[8..].try_into().expect("8 bytes")),
        };
        if header.width == 0 || header.height == 0 {
            return Err(Error::format("event file declares an empty sensor"));
        }
        Ok(header)
    }
}

pub fn encode_record(e: &Event) -> [u8; RECORD_LEN] {
    let mut b = [0u8; RECORD_LEN];
    b[..2].copy_from_slice(&e.x.to_le_bytes());
    b[2..4].copy_from_slice(&e.y.to_le_bytes());
    b[4..12].copy_from_slice(&e.t.to_le_bytes());
    b[12] = e.p.sign() as u8;
    b
}

/// Streaming reader that checks bounds, polarity and time order.
pub struct EventReader<R> {
    inner: R,
    header: EventHeader,
    read: u64,
    last_t: u64,
}

impl<R: Read> EventReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HEADER_LEN];
        inner.read_exact(&mut b).map_err(|e| Error::format(format!("reading event header: {e}")))?;
        Ok(EventReader { inner, header: EventHeader::parse(&b)?, read: 0, last_t: 0 })
    }

    pub fn header(&self) -> EventHeader {
        self.header
    }

    pub fn into_inner(self) -> R {
        self.inner
    }

    /// Next event, `None` after the declared count (or at end of input for
    /// an [`UNBOUNDED`] stream). Raw IO errors are
    /// passed through so socket readers can tell timeouts apart.
    pub fn next_event(&mut self) -> io::Result<Option<Result<Event>>> {
        if self.read == self.header.count {
            return Ok(None);
        }
        let mut b = [0u8; RECORD_LEN];
        let mut filled = 0;
        while filled < RECORD_LEN {
            match self.inner.read(&mut b[filled..]) {
                Ok(0) if filled == 0 && self.header.count == UNBOUNDED => return Ok(None),
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => filled += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.read += 1;
        Ok(Some(self.decode(&b)))
    }

    fn decode(&mut self, b: &[u8; RECORD_LEN]) -> Result<Event> {
        let x = u16::from_le_bytes([b[0], b[1]]);
        let y = u16::from_le_bytes([b[2], b[3]]);
        let t = u64::from_le_bytes(b[4..12].try_into().expect("8 bytes"));
        let n = self.read - 1;
        let p = Polarity::from_sign(b[12] as i8).map_err(|_| Error::format(format!("record {n}: polarity {}", b[12] as i8)))?;
        if x >= self.header.width || y >= self.header.height {
            return Err(Error::format(format!("record {n}: pixel ({x}, {y}) outside the sensor")));
        }
        if t < self.last_t {
            return Err(Error::format(format!("record {n}: timestamp {t} goes backwards")));
        }
        self.last_t = t;
        Ok(Event::new(x, y, t, p))
    }
}

impl<R: Read> Iterator for EventReader<R> {
    type Item = Result<Event>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_event() {
            Ok(v) => v,
            Err(e) => Some(Err(Error::format(format!("truncated event file: {e}")))),
        }
    }
}

pub fn write_events_to<W: Write>(mut w: W, stream: &EventStream) -> io::Result<()> {
    let header = EventHeader { width: stream.width, height: stream.height, count: stream.events.len() as u64 };
    w.write_all(&header.to_bytes())?;
    for e in &stream.events {
        w.write_all(&encode_record(e))?;
    }
    w.flush()
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    let f = File::create(path).at(path)?;
    write_events_to(BufWriter::new(f), stream).at(path)
}

pub fn read_events_from<R: Read>(r: R) -> Result<EventStream> {
    let reader = EventReader::new(r)?;
    let EventHeader { width, height, .. } = reader.header();
    let events = reader.collect::<Result<Vec<_>>>()?;
    Ok(EventStream::new(events, width, height)?)
}

/// Reads a binary or CSV event file, telling them apart by the magic.
/// CSV files carry no sensor size; `csv_size` supplies it.
pub fn read_events(path: &Path, csv_size: (u16, u16)) -> Result<EventStream> {
    let mut f = BufReader::new(File::open(path).at(path)?);
    let mut magic = [0u8; 4];
    let n = f.read(&mut magic).at(path)?;
    let f = BufReader::new(File::open(path).at(path)?);
    if n == 4 && &magic == MAGIC {
        read_events_from(f)
    } else {
        read_csv_from(f, csv_size.0, csv_size.1)
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CsvEvent {
    t: u64,
    x: u16,
    y: u16,
    p: i8,
}

/// CSV form `t,x,y,p` with a header row.
pub fn write_csv_to<W: Write>(w: W, stream: &EventStream) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for e in &stream.events {
        wr.serialize(CsvEvent { t: e.t, x: e.x, y: e.y, p: e.p.sign() }).map_err(Error::format)?;
    }
    wr.flush().map_err(Error::format)
}

pub fn read_csv_from<R: Read>(r: R, width: u16, height: u16) -> Result<EventStream> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut events = Vec::new();
    for (i, row) in rd.deserialize::<CsvEvent>().enumerate() {
        let row = row.map_err(|e| Error::format(format!("csv row {}: {e}", i + 1)))?;
        let p = Polarity::from_sign(row.p).map_err(|_| Error::format(format!("csv row {}: polarity {}", i + 1, row.p)))?;
        events.push(Event::new(row.x, row.y, row.t, p));
    }
    Ok(EventStream::new(events, width, height)?)
}
