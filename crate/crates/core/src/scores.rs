//! Per-episode score records, trailing-mean smoothing and the score CSV.
//!
//! CSV columns are fixed: `episode,score,smoothed_score,steps,wall_clock_s`,
//! with a trailing `worker_id` column for multi-worker runs.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CSV_HEADER: &str = "episode,score,smoothed_score,steps,wall_clock_s";
pub const CSV_HEADER_WORKER: &str = "episode,score,smoothed_score,steps,wall_clock_s,worker_id";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub episode: usize,
    /// Agent points minus opponent points.
    pub score: i32,
    pub smoothed: f64,
    pub steps: u64,
    pub wall_clock_s: f64,
    pub worker_id: Option<usize>,
}

impl ScoreRecord {
    fn csv_line(&self, with_worker: bool) -> String {
        let mut line = format!(
            "{},{},{},{},{:.3}",
            self.episode, self.score, self.smoothed, self.steps, self.wall_clock_s
        );
        if with_worker {
            line.push(',');
            if let Some(w) = self.worker_id {
                line.push_str(&w.to_string());
            }
        }
        line
    }
}

/// Trailing moving average over `min(window, seen)` scores.
pub fn smooth_scores(raw: &[i32], window: usize) -> Vec<f64> {
    let mut smoother = Smoother::new(window);
    raw.iter().map(|&s| smoother.push(s)).collect()
}

#[derive(Debug, Clone)]
pub struct Smoother {
    window: usize,
    buf: VecDeque<i32>,
    sum: i64,
}

impl Smoother {
    pub fn new(window: usize) -> Self {
        assert!(window >= 1, "smoothing window must be at least 1");
        Self { window, buf: VecDeque::with_capacity(window), sum: 0 }
    }

    pub fn push(&mut self, score: i32) -> f64 {
        if self.buf.len() == self.window {
            self.sum -= i64::from(self.buf.pop_front().expect("non-empty"));
        }
        self.buf.push_back(score);
        self.sum += i64::from(score);
        self.current()
    }

    pub fn current(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.sum as f64 / self.buf.len() as f64
        }
    }
}

/// Where training progress goes: always kept in memory, optionally mirrored
/// to a CSV file, plus the checkpoint cadence.
pub struct LogSinks {
    smoother: Smoother,
    records: Vec<ScoreRecord>,
    csv: Option<BufWriter<File>>,
    with_worker: bool,
    checkpoint_dir: Option<PathBuf>,
    checkpoint_every: usize,
    record_wall_clock: bool,
    progress_every: usize,
    start: Instant,
}

impl LogSinks {
    pub fn memory(window: usize) -> Self {
        Self {
            smoother: Smoother::new(window),
            records: Vec::new(),
            csv: None,
            with_worker: false,
            checkpoint_dir: None,
            checkpoint_every: 0,
            record_wall_clock: true,
            progress_every: 0,
            start: Instant::now(),
        }
    }

    /// Mirrors records into `path`, writing the header immediately.
    pub fn csv(mut self, path: &Path, with_worker: bool) -> io::Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{}", if with_worker { CSV_HEADER_WORKER } else { CSV_HEADER })?;
        self.csv = Some(w);
        self.with_worker = with_worker;
        Ok(self)
    }

    pub fn checkpoints(mut self, dir: &Path, every: usize) -> Self {
        self.checkpoint_dir = Some(dir.to_path_buf());
        self.checkpoint_every = every;
        self
    }

    /// Writes 0 in the wall-clock column so logs of identical runs compare
    /// byte for byte.
    pub fn without_wall_clock(mut self) -> Self {
        self.record_wall_clock = false;
        self
    }

    /// Logs a progress line every `every` episodes (0 disables).
    pub fn progress(mut self, every: usize) -> Self {
        self.progress_every = every;
        self
    }

    pub fn elapsed_s(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn record(&mut self, episode: usize, score: i32, steps: u64, worker_id: Option<usize>) -> io::Result<&ScoreRecord> {
        let now = self.elapsed_s();
        self.record_at(episode, score, steps, worker_id, now)
    }

    pub fn record_at(
        &mut self,
        episode: usize,
        score: i32,
        steps: u64,
        worker_id: Option<usize>,
        wall_clock_s: f64,
    ) -> io::Result<&ScoreRecord> {
        let smoothed = self.smoother.push(score);
        let rec = ScoreRecord {
            episode,
            score,
            smoothed,
            steps,
            wall_clock_s: if self.record_wall_clock { wall_clock_s } else { 0.0 },
            worker_id,
        };
        if let Some(w) = self.csv.as_mut() {
            writeln!(w, "{}", rec.csv_line(self.with_worker))?;
        }
        if self.progress_every > 0 && (episode + 1) % self.progress_every == 0 {
            log::info!("episode {:>6}  score {:>3}  smoothed {:>7.2}  steps {}", episode + 1, score, smoothed, steps);
        }
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Checkpoint path due after `episodes_done` episodes, if any.
    pub fn checkpoint_due(&self, episodes_done: usize) -> Option<PathBuf> {
        let dir = self.checkpoint_dir.as_ref()?;
        (self.checkpoint_every > 0 && episodes_done % self.checkpoint_every == 0)
            .then(|| dir.join(format!("checkpoint_{episodes_done:08}.pgnn")))
    }

    pub fn records(&self) -> &[ScoreRecord] {
        &self.records
    }

    pub fn smoothed(&self) -> f64 {
        self.smoother.current()
    }

    pub fn flush(&mut self) -> io::Result<()> {
        if let Some(w) = self.csv.as_mut() {
            w.flush()?;
        }
        Ok(())
    }

    pub fn into_records(mut self) -> io::Result<Vec<ScoreRecord>> {
        self.flush()?;
        Ok(self.records)
    }
}

/// Parses a score CSV written by [`LogSinks`].
pub fn read_score_csv(path: &Path) -> io::Result<Vec<ScoreRecord>> {
    let bad = |line: usize, what: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{}:{line}: {what}", path.display()));
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| bad(1, "empty file"))??;
    let with_worker = match header.trim() {
        CSV_HEADER => false,
        CSV_HEADER_WORKER => true,
        _ => return Err(bad(1, "unexpected header")),
    };
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != if with_worker { 6 } else { 5 } {
            return Err(bad(n, "wrong column count"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        out.push(ScoreRecord {
            episode: cols[0].parse().map_err(|_| bad(n, "bad episode"))?,
            score: cols[1].parse().map_err(|_| bad(n, "bad score"))?,
            smoothed: num(cols[2])?,
            steps: cols[3].parse().map_err(|_| bad(n, "bad steps"))?,
            wall_clock_s: num(cols[4])?,
            worker_id: if with_worker && !cols[5].is_empty() {
                Some(cols[5].parse().map_err(|_| bad(n, "bad worker id"))?)
            } else {
                None
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_examples() {
        let raw = [-21, 3, 7, -2];
        let out = smooth_scores(&raw, 1);
        assert_eq!(out, raw.iter().map(|&s| s as f64).collect::<Vec<_>>());
        assert!(smooth_scores(&[-21; 10], 4).iter().all(|&s| s == -21.0));
        assert_eq!(*smooth_scores(&[-21, -19, -17], 3).last().unwrap(), -19.0);
        assert_eq!(smooth_scores(&[2, 4, 6, 8], 2), vec![2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for with_worker in [false, true] {
            let path = dir.path().join(format!("s{with_worker}.csv"));
            let mut sinks = LogSinks::memory(2).csv(&path, with_worker).unwrap();
            sinks.record_at(0, -21, 100, with_worker.then_some(3), 0.5).unwrap();
            sinks.record_at(1, -18, 120, with_worker.then_some(1), 1.25).unwrap();
            let written = sinks.into_records().unwrap();
            let read = read_score_csv(&path).unwrap();
            assert_eq!(read, written);
            assert_eq!(read[1].smoothed, -19.5);
        }
    }

    #[test]
    fn checkpoint_cadence() {
        let sinks = LogSinks::memory(1).checkpoints(Path::new("/tmp/x"), 5);
        assert!(sinks.checkpoint_due(4).is_none());
        assert_eq!(sinks.checkpoint_due(10).unwrap(), Path::new("/tmp/x/checkpoint_00000010.pgnn"));
        assert!(LogSinks::memory(1).checkpoint_due(5).is_none());
    }
}
