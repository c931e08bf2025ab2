//! Event-sourced annotation sessions.
//!
//! An annotator fixes the count on the first frame and then records `+1` /
//! `-1` adjustments while the video plays. The label of frame `k` is the
//! initial count plus every adjustment at frames `<= k`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelRow, LabelTable};
use crate::error::{Error, Result};
use crate::label::LabelMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustEvent {
    /// Position in the order the annotator recorded events.
    pub seq: u64,
    pub frame: u64,
    pub delta: i8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub video_id: String,
    pub frame_count: u64,
    pub mode: LabelMode,
    pub initial: Option<u32>,
    /// Sorted by frame, then by `seq`.
    pub events: Vec<AdjustEvent>,
    next_seq: u64,
}

impl AnnotationSession {
    pub fn new(video_id: impl Into<String>, frame_count: u64, mode: LabelMode) -> Self {
        Self {
            video_id: video_id.into(),
            frame_count,
            mode,
            initial: None,
            events: Vec::new(),
            next_seq: 0,
        }
    }

    fn lowest_label(initial: i64, events: &[AdjustEvent]) -> (u64, i64) {
        let mut level = initial;
        let mut worst = (0, initial);
        let mut i = 0;
        while i < events.len() {
            let frame = events[i].frame;
            while i < events.len() && events[i].frame == frame {
                level += events[i].delta as i64;
                i += 1;
            }
            if level < worst.1 {
                worst = (frame, level);
            }
        }
        worst
    }

    fn check(initial: i64, events: &[AdjustEvent]) -> Result<()> {
        let (frame, low) = Self::lowest_label(initial, events);
        if low < 0 {
            return Err(Error::Annotation(format!(
                "the count at frame {frame} would drop to {low}"
            )));
        }
        Ok(())
    }

    pub fn set_initial(&mut self, count: i64) -> Result<()> {
        if count < 0 {
            return Err(Error::Annotation(format!("initial count {count} is negative")));
        }
        let count =
            u32::try_from(count).map_err(|_| Error::Annotation(format!("initial count {count} is too large")))?;
        Self::check(count as i64, &self.events)?;
        self.initial = Some(count);
        Ok(())
    }

    pub fn adjust(&mut self, frame: u64, delta: i8) -> Result<AdjustEvent> {
        let initial = self
            .initial
            .ok_or_else(|| Error::Annotation("set the first-frame count before adjusting".into()))?;
        if delta != 1 && delta != -1 {
            return Err(Error::Annotation(format!("adjustments are +1 or -1, got {delta}")));
        }
        if frame >= self.frame_count {
            return Err(Error::OutOfRange(format!(
                "frame {frame} of a {}-frame video",
                self.frame_count
            )));
        }
        let ev = AdjustEvent {
            seq: self.next_seq,
            frame,
            delta,
        };
        let at = self.events.partition_point(|e| e.frame <= frame);
        let mut events = self.events.clone();
        events.insert(at, ev);
        Self::check(initial as i64, &events)?;
        self.events = events;
        self.next_seq += 1;
        Ok(ev)
    }

    /// Removes the most recently recorded event.
    pub fn undo(&mut self) -> Result<AdjustEvent> {
        let (i, _) = self
            .events
            .iter()
            .enumerate()
            .max_by_key(|(_, e)| e.seq)
            .ok_or_else(|| Error::Annotation("nothing to undo".into()))?;
        let mut events = self.events.clone();
        let ev = events.remove(i);
        Self::check(self.initial.unwrap_or(0) as i64, &events)?;
        self.events = events;
        Ok(ev)
    }

    /// Per-frame labels for frames `0..frame_count`.
    pub fn materialize(&self) -> Result<Vec<u32>> {
        let initial = self
            .initial
            .ok_or_else(|| Error::Annotation("no first-frame count yet".into()))?;
        let mut out = Vec::with_capacity(self.frame_count as usize);
        let mut level = initial as i64;
        let mut next = self.events.iter().peekable();
        for k in 0..self.frame_count {
            while let Some(e) = next.next_if(|e| e.frame == k) {
                level += e.delta as i64;
            }
            out.push(level as u32);
        }
        Ok(out)
    }

    pub fn label_at(&self, frame: u64) -> Result<u32> {
        let initial = self
            .initial
            .ok_or_else(|| Error::Annotation("no first-frame count yet".into()))?;
        let sum: i64 = self
            .events
            .iter()
            .take_while(|e| e.frame <= frame)
            .map(|e| e.delta as i64)
            .sum();
        Ok((initial as i64 + sum) as u32)
    }

    /// One row per frame. In all-people mode the people column is written and
    /// customer counts from `base` are kept; in customers-only mode the
    /// customer column is written and people counts from `base` are kept
    /// (frames missing from `base` get the customer count as people count).
    pub fn export(&self, timestamps_ms: &[u64], base: Option<&LabelTable>) -> Result<LabelTable> {
        if timestamps_ms.len() as u64 != self.frame_count {
            return Err(Error::Shape(format!(
                "{} timestamps for {} frames",
                timestamps_ms.len(),
                self.frame_count
            )));
        }
        let labels = self.materialize()?;
        let rows = labels
            .iter()
            .zip(timestamps_ms)
            .enumerate()
            .map(|(k, (&n, &ts))| {
                let prior = base.and_then(|b| b.get(k as u64));
                let (people_count, customer_count) = match self.mode {
                    LabelMode::AllPeople => (n, prior.and_then(|r| r.customer_count)),
                    LabelMode::CustomersOnly => (prior.map_or(n, |r| r.people_count), Some(n)),
                };
                LabelRow {
                    frame_id: k as u64,
                    timestamp_ms: ts,
                    people_count,
                    customer_count,
                }
            })
            .collect();
        LabelTable::new(rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        if s.events
            .windows(2)
            .any(|w| (w[0].frame, w[0].seq) >= (w[1].frame, w[1].seq))
        {
            return Err(Error::Annotation("session events are not in frame order".into()));
        }
        if s.events.iter().any(|e| e.seq >= s.next_seq || e.frame >= s.frame_count) {
            return Err(Error::Annotation("session events are inconsistent".into()));
        }
        if let Some(i) = s.initial {
            Self::check(i as i64, &s.events)?;
        } else if !s.events.is_empty() {
            return Err(Error::Annotation("events recorded without a first-frame count".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(n: u64) -> AnnotationSession {
        AnnotationSession::new("v", n, LabelMode::AllPeople)
    }

    #[test]
    fn initial_only() {
        let mut s = session(20);
        s.set_initial(3).unwrap();
        assert_eq!(s.materialize().unwrap(), vec![3; 20]);
        s.set_initial(1).unwrap();
        assert_eq!(s.materialize().unwrap(), vec![1; 20]);
        assert!(s.set_initial(-1).is_err());
    }

    #[test]
    fn adjustments_propagate_forward() {
        let mut s = session(20);
        s.set_initial(3).unwrap();
        s.adjust(10, 1).unwrap();
        let m = s.materialize().unwrap();
        assert!(m[..10].iter().all(|&c| c == 3));
        assert!(m[10..].iter().all(|&c| c == 4));
        assert_eq!(s.label_at(9).unwrap(), 3);
        assert_eq!(s.label_at(10).unwrap(), 4);
    }

    #[test]
    fn non_negative_counts() {
        let mut s = session(20);
        s.set_initial(0).unwrap();
        assert!(s.adjust(5, -1).is_err());
        assert!(s.events.is_empty());
        s.adjust(3, 1).unwrap();
        s.adjust(8, -1).unwrap();
        assert!(s.set_initial(0).is_ok());
        assert!(s.adjust(2, -1).is_err());
        assert!(s.adjust(1, 2).is_err());
        assert!(s.adjust(20, 1).is_err());
    }

    #[test]
    fn undo_pops_latest() {
        let mut s = session(20);
        assert!(s.adjust(1, 1).is_err());
        s.set_initial(1).unwrap();
        s.adjust(12, 1).unwrap();
        s.adjust(4, -1).unwrap();
        let ev = s.undo().unwrap();
        assert_eq!((ev.frame, ev.delta), (4, -1));
        assert_eq!(s.undo().unwrap().frame, 12);
        assert!(s.undo().is_err());
    }

    #[test]
    fn export_modes() {
        let ts: Vec<u64> = (0..4).map(|k| k * 50).collect();
        let mut s = session(4);
        s.set_initial(2).unwrap();
        s.adjust(2, 1).unwrap();
        let all = s.export(&ts, None).unwrap();
        assert_eq!(
            all.rows().iter().map(|r| r.people_count).collect::<Vec<_>>(),
            vec![2, 2, 3, 3]
        );
        assert_eq!(
            LabelTable::from_csv_reader(all.to_csv_string().as_bytes()).unwrap(),
            all
        );

        let mut c = AnnotationSession::new("v", 4, LabelMode::CustomersOnly);
        c.set_initial(1).unwrap();
        let out = c.export(&ts, Some(&all)).unwrap();
        assert_eq!(
            out.rows().iter().map(|r| r.people_count).collect::<Vec<_>>(),
            vec![2, 2, 3, 3]
        );
        assert!(out.rows().iter().all(|r| r.customer_count == Some(1)));
    }

    #[test]
    fn json_round_trip() {
        let mut s = session(30);
        s.set_initial(2).unwrap();
        s.adjust(7, 1).unwrap();
        s.adjust(3, -1).unwrap();
        let text = s.to_json().unwrap();
        let back = AnnotationSession::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_json().unwrap(), text);
    }
}
