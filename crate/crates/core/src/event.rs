//! Event and event-stream types, stream validation, time slicing and the
//! binary on-disk event format.
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! header:  magic "EVY1" | width u16 | height u16 | count u64        (16 bytes)
//! event:   t_us u64 | x u16 | y u16 | polarity i8 (+1/-1) | pad u8  (14 bytes)
//! ```

use std::fmt;
use std::io::{Read, Write};

use crate::error::{Error, FormatError, Result};

pub const EVENT_MAGIC: [u8; 4] = *b"EVY1";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    #[inline]
    pub fn sign(self) -> i32 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_sign(sign: i64) -> Option<Self> {
        match sign {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }
}

/// One polarity change at one pixel. `t_us` is relative to the stream epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t_us: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t_us: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Event { t_us, x, y, polarity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Geometry {
    pub width: u16,
    pub height: u16,
}

impl Geometry {
    pub fn new(width: u16, height: u16) -> Self {
        Geometry { width, height }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn contains(&self, x: u16, y: u16) -> bool {
        x < self.width && y < self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NonMonotonic { previous_t_us: u64, t_us: u64 },
    XOutOfBounds { x: u16, width: u16 },
    YOutOfBounds { y: u16, height: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub index: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ViolationKind::NonMonotonic { previous_t_us, t_us } => write!(
                f,
                "event {}: timestamp {} precedes previous {}",
                self.index, t_us, previous_t_us
            ),
            ViolationKind::XOutOfBounds { x, width } => {
                write!(f, "event {}: x={} outside width {}", self.index, x, width)
            }
            ViolationKind::YOutOfBounds { y, height } => {
                write!(f, "event {}: y={} outside height {}", self.index, y, height)
            }
        }
    }
}

/// Result of [`EventStream::validate`]. An empty violation list means the
/// stream satisfies every invariant.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Time-ordered events plus sensor geometry.
///
/// [`EventStream::new`] enforces the invariants; [`EventStream::from_raw`]
/// does not, so that [`EventStream::validate`] has something to report on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    geometry: Geometry,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(geometry: Geometry, events: Vec<Event>) -> Result<Self> {
        let stream = EventStream { geometry, events };
        let report = stream.validate();
        match report.violations.first() {
            None => Ok(stream),
            Some(v) => Err(Error::precondition(format!(
                "invalid event stream ({} violations, first: {})",
                report.violations.len(),
                v
            ))),
        }
    }

    pub fn from_raw(geometry: Geometry, events: Vec<Event>) -> Self {
        EventStream { geometry, events }
    }

    pub fn empty(geometry: Geometry) -> Self {
        EventStream { geometry, events: Vec::new() }
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_t_us(&self) -> Option<u64> {
        self.events.first().map(|e| e.t_us)
    }

    pub fn last_t_us(&self) -> Option<u64> {
        self.events.last().map(|e| e.t_us)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let g = self.geometry;
        let mut prev: Option<u64> = None;
        for (index, e) in self.events.iter().enumerate() {
            if let Some(p) = prev {
                if e.t_us < p {
                    violations.push(Violation {
                        index,
                        kind: ViolationKind::NonMonotonic { previous_t_us: p, t_us: e.t_us },
                    });
                }
            }
            if e.x >= g.width {
                violations.push(Violation {
                    index,
                    kind: ViolationKind::XOutOfBounds { x: e.x, width: g.width },
                });
            }
            if e.y >= g.height {
                violations.push(Violation {
                    index,
                    kind: ViolationKind::YOutOfBounds { y: e.y, height: g.height },
                });
            }
            prev = Some(prev.map_or(e.t_us, |p| p.max(e.t_us)));
        }
        ValidationReport { violations }
    }

    /// Index range of events with `t0_us <= t < t1_us`. Requires a sorted stream.
    pub fn range_indices(&self, t0_us: u64, t1_us: u64) -> std::ops::Range<usize> {
        let lo = self.events.partition_point(|e| e.t_us < t0_us);
        let hi = lo + self.events[lo..].partition_point(|e| e.t_us < t1_us);
        lo..hi
    }

    /// Events in the half-open interval `[t0_us, t1_us)`, order preserved.
    pub fn slice_by_time(&self, t0_us: u64, t1_us: u64) -> Result<EventStream> {
        if t0_us > t1_us {
            return Err(Error::precondition(format!(
                "inverted time interval [{t0_us}, {t1_us})"
            )));
        }
        let r = self.range_indices(t0_us, t1_us);
        Ok(EventStream { geometry: self.geometry, events: self.events[r].to_vec() })
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.polarity.sign() as i64).sum()
    }
}

/// Writes `stream` in the binary event format. The stream must be valid.
pub fn write_events<W: Write>(stream: &EventStream, mut sink: W) -> Result<()> {
    let report = stream.validate();
    if let Some(v) = report.violations.first() {
        return Err(Error::precondition(format!("refusing to write invalid stream: {v}")));
    }
    let g = stream.geometry;
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    buf.extend_from_slice(&EVENT_MAGIC);
    buf.extend_from_slice(&g.width.to_le_bytes());
    buf.extend_from_slice(&g.height.to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t_us.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.polarity.sign() as i8 as u8);
        buf.push(0);
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(())
}

pub fn read_events<R: Read>(mut source: R) -> Result<EventStream> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_events(&bytes)
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != EVENT_MAGIC {
            return Err(bad_magic(bytes));
        }
        return Err(FormatError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        }
        .into());
    }
    if bytes[..4] != EVENT_MAGIC {
        return Err(bad_magic(bytes));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (HEADER_LEN as u64).saturating_add(count.saturating_mul(RECORD_LEN as u64));
    if (bytes.len() as u64) < expected {
        return Err(FormatError::Truncated { expected, found: bytes.len() as u64 }.into());
    }
    if (bytes.len() as u64) > expected {
        return Err(FormatError::InvalidContent(format!(
            "{} trailing bytes after {} events",
            bytes.len() as u64 - expected,
            count
        ))
        .into());
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in bytes[HEADER_LEN..].chunks_exact(RECORD_LEN).enumerate() {
        let t_us = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes([rec[8], rec[9]]);
        let y = u16::from_le_bytes([rec[10], rec[11]]);
        let polarity = Polarity::from_sign(rec[12] as i8 as i64).ok_or_else(|| {
            FormatError::InvalidContent(format!("event {i}: polarity byte {}", rec[12] as i8))
        })?;
        events.push(Event { t_us, x, y, polarity });
    }
    let stream = EventStream::from_raw(Geometry { width, height }, events);
    if let Some(v) = stream.validate().violations.first() {
        return Err(FormatError::InvalidContent(v.to_string()).into());
    }
    Ok(stream)
}

fn bad_magic(bytes: &[u8]) -> Error {
    let mut found = [0u8; 4];
    found.copy_from_slice(&bytes[..4]);
    FormatError::BadMagic { expected: EVENT_MAGIC, found }.into()
}

/// Reads `t_us,x,y,p` CSV (ingestion only). A header row is optional.
/// Polarity accepts `1`, `+1` or `-1`. When `geometry` is `None` it is
/// inferred as one past the largest coordinate seen.
pub fn read_events_csv<R: Read>(source: R, geometry: Option<Geometry>) -> Result<EventStream> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source);
    let mut events = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 4 {
            return Err(Error::parse(format!("line {}: expected 4 fields", line + 1)));
        }
        if line == 0 && record[0].parse::<u64>().is_err() {
            continue;
        }
        let field = |i: usize| -> Result<i64> {
            record[i]
                .trim_start_matches('+')
                .parse::<i64>()
                .map_err(|e| Error::parse(format!("line {}: field {}: {}", line + 1, i, e)))
        };
        let (t, x, y, p) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if t < 0 || !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(Error::parse(format!("line {}: value out of range", line + 1)));
        }
        let polarity = Polarity::from_sign(p)
            .ok_or_else(|| Error::parse(format!("line {}: polarity {}", line + 1, p)))?;
        events.push(Event::new(t as u64, x as u16, y as u16, polarity));
    }
    let geometry = geometry.unwrap_or_else(|| {
        let w = events.iter().map(|e| e.x).max().map_or(0, |m| m + 1);
        let h = events.iter().map(|e| e.y).max().map_or(0, |m| m + 1);
        Geometry::new(w, h)
    });
    let stream = EventStream::from_raw(geometry, events);
    if let Some(v) = stream.validate().violations.first() {
        return Err(FormatError::InvalidContent(v.to_string()).into());
    }
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, x: u16, y: u16, p: i64) -> Event {
        Event::new(t, x, y, Polarity::from_sign(p).unwrap())
    }

    #[test]
    fn empty_stream_is_valid() {
        let s = EventStream::empty(Geometry::new(4, 4));
        assert!(s.validate().is_ok());
    }

    #[test]
    fn non_monotonic_reported_at_index_one() {
        let s = EventStream::from_raw(Geometry::new(4, 4), vec![ev(5, 0, 0, 1), ev(3, 0, 0, 1)]);
        let r = s.validate();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].index, 1);
        assert!(matches!(r.violations[0].kind, ViolationKind::NonMonotonic { .. }));
    }

    #[test]
    fn x_bound_is_half_open() {
        let s = EventStream::from_raw(Geometry::new(500, 500), vec![ev(0, 500, 0, 1)]);
        let r = s.validate();
        assert_eq!(
            r.violations,
            vec![Violation { index: 0, kind: ViolationKind::XOutOfBounds { x: 500, width: 500 } }]
        );
        assert!(EventStream::new(Geometry::new(500, 500), vec![ev(0, 499, 499, -1)]).is_ok());
    }

    #[test]
    fn slice_boundaries() {
        let g = Geometry::new(2, 2);
        let s = EventStream::new(
            g,
            vec![ev(99_999, 0, 0, 1), ev(100_000, 0, 0, 1), ev(199_999, 1, 0, -1), ev(200_000, 1, 1, 1)],
        )
        .unwrap();
        assert!(s.slice_by_time(0, 0).unwrap().is_empty());
        let mid = s.slice_by_time(100_000, 200_000).unwrap();
        assert_eq!(mid.events(), &s.events()[1..3]);
        assert_eq!(s.slice_by_time(0, u64::MAX).unwrap(), s);
        assert!(matches!(s.slice_by_time(10, 5), Err(Error::Precondition(_))));
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let s = EventStream::new(Geometry::new(3, 2), vec![ev(7, 2, 1, -1), ev(7, 0, 0, 1)]).unwrap();
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 2 * 14);
        assert_eq!(&buf[..4], b"EVY1");
        assert_eq!(&buf[4..8], &[3, 0, 2, 0]);
        assert_eq!(buf[16 + 12], 0xFF);
        assert_eq!(read_events(&buf[..]).unwrap(), s);

        let empty = EventStream::empty(Geometry::new(10, 10));
        let mut buf = Vec::new();
        write_events(&empty, &mut buf).unwrap();
        assert_eq!(read_events(&buf[..]).unwrap(), empty);
    }

    #[test]
    fn read_rejects_corruption_with_distinct_kinds() {
        let s = EventStream::new(Geometry::new(3, 2), vec![ev(1, 2, 1, 1)]).unwrap();
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_events(&bad[..]), Err(Error::Format(FormatError::BadMagic { .. }))));

        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_events(short), Err(Error::Format(FormatError::Truncated { .. }))));

        let mut oob = buf.clone();
        oob[16 + 8] = 9; // x = 9 in a 3-wide geometry
        assert!(matches!(
            read_events(&oob[..]),
            Err(Error::Format(FormatError::InvalidContent(_)))
        ));

        let mut pol = buf;
        pol[16 + 12] = 0;
        assert!(matches!(
            read_events(&pol[..]),
            Err(Error::Format(FormatError::InvalidContent(_)))
        ));
    }

    #[test]
    fn write_refuses_invalid_stream() {
        let s = EventStream::from_raw(Geometry::new(2, 2), vec![ev(0, 5, 0, 1)]);
        assert!(matches!(write_events(&s, Vec::new()), Err(Error::Precondition(_))));
    }

    #[test]
    fn csv_ingestion() {
        let text = "t_us,x,y,p\n10,1,2,1\n20,0,0,-1\n20,3,1,+1\n";
        let s = read_events_csv(text.as_bytes(), None).unwrap();
        assert_eq!(s.geometry(), Geometry::new(4, 3));
        assert_eq!(s.len(), 3);
        assert_eq!(s.polarity_sum(), 1);
        assert!(read_events_csv("1,0,0,2\n".as_bytes(), None).is_err());
        assert!(read_events_csv("5,0,0,1\n3,0,0,1\n".as_bytes(), None).is_err());
    }
}
