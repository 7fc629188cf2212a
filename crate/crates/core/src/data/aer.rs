//! N-MNIST address-event records.
//!
//! Each event is 40 bits:
//!
//! ```text
//! byte 0      x address (0..=33)
//! byte 1      y address (0..=33)
//! byte 2      bit 7 polarity, bits 6..0 timestamp bits 22..16
//! bytes 3, 4  timestamp bits 15..0, big-endian
//! ```
//!
//! Timestamps are microseconds.

use crate::error::{Error, Result};

pub const SENSOR_WIDTH: usize = 34;
pub const SENSOR_HEIGHT: usize = 34;
pub const RECORD_BYTES: usize = 5;
pub const MAX_TIMESTAMP_US: u32 = (1 << 23) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u8,
    pub y: u8,
    pub polarity: u8,
    pub t_us: u32,
}

impl Event {
    /// Flat feature index `polarity * 34 * 34 + y * 34 + x`.
    pub fn feature_index(&self) -> usize {
        self.polarity as usize * SENSOR_WIDTH * SENSOR_HEIGHT + self.y as usize * SENSOR_WIDTH + self.x as usize
    }
}

pub fn parse_nmnist_file(bytes: &[u8]) -> Result<Vec<Event>> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::TruncatedRecord(bytes.len()));
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let (x, y) = (rec[0], rec[1]);
            if x as usize >= SENSOR_WIDTH || y as usize >= SENSOR_HEIGHT {
                return Err(Error::CoordinateOutOfRange { index, x, y });
            }
            let polarity = rec[2] >> 7;
            let t_us = (u32::from(rec[2] & 0x7f) << 16) | (u32::from(rec[3]) << 8) | u32::from(rec[4]);
            Ok(Event { x, y, polarity, t_us })
        })
        .collect()
}

pub fn encode_event(ev: &Event) -> Result<[u8; RECORD_BYTES]> {
    if ev.x as usize >= SENSOR_WIDTH || ev.y as usize >= SENSOR_HEIGHT {
        return Err(Error::CoordinateOutOfRange { index: 0, x: ev.x, y: ev.y });
    }
    if ev.t_us > MAX_TIMESTAMP_US {
        return Err(Error::TimestampOverflow(ev.t_us));
    }
    Ok([ev.x, ev.y, ((ev.polarity & 1) << 7) | ((ev.t_us >> 16) as u8 & 0x7f), (ev.t_us >> 8) as u8, ev.t_us as u8])
}

pub fn encode_events(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * RECORD_BYTES);
    for ev in events {
        out.extend_from_slice(&encode_event(ev)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_reference_record() {
        let evs = parse_nmnist_file(&[0x21, 0x10, 0x80, 0x00, 0x0A]).unwrap();
        assert_eq!(evs, vec![Event { x: 33, y: 16, polarity: 1, t_us: 10 }]);
    }

    #[test]
    fn decodes_zero_record() {
        let evs = parse_nmnist_file(&[0; 5]).unwrap();
        assert_eq!(evs, vec![Event { x: 0, y: 0, polarity: 0, t_us: 0 }]);
    }

    #[test]
    fn high_timestamp_bits() {
        let evs = parse_nmnist_file(&[1, 2, 0x7f, 0xff, 0xff]).unwrap();
        assert_eq!(evs[0].t_us, MAX_TIMESTAMP_US);
        assert_eq!(evs[0].polarity, 0);
    }

    #[test]
    fn rejects_truncated() {
        assert!(matches!(parse_nmnist_file(&[0; 6]), Err(Error::TruncatedRecord(6))));
    }

    #[test]
    fn rejects_out_of_range() {
        let err = parse_nmnist_file(&[0, 0, 0, 0, 0, 34, 0, 0, 0, 0]).unwrap_err();
        assert!(matches!(err, Error::CoordinateOutOfRange { index: 1, x: 34, y: 0 }));
    }

    #[test]
    fn encode_rejects_wide_timestamp() {
        let ev = Event { x: 0, y: 0, polarity: 0, t_us: 1 << 23 };
        assert!(matches!(encode_event(&ev), Err(Error::TimestampOverflow(_))));
    }

    #[test]
    fn feature_index_layout() {
        let ev = Event { x: 3, y: 2, polarity: 1, t_us: 0 };
        assert_eq!(ev.feature_index(), 1156 + 68 + 3);
    }

    proptest! {
        #[test]
        fn bytes_round_trip(recs in prop::collection::vec((0u8..34, 0u8..34, any::<u8>(), any::<u8>(), any::<u8>()), 0..64)) {
            let bytes: Vec<u8> = recs.iter().flat_map(|&(x, y, b2, b3, b4)| [x, y, b2, b3, b4]).collect();
            let evs = parse_nmnist_file(&bytes).unwrap();
            prop_assert_eq!(encode_events(&evs).unwrap(), bytes);
        }
    }
}
