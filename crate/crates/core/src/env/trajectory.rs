//! CSV dumps of environment trajectories.
//!
//! `<name>.csv`: `step,q_slice1..q_sliceL,reward,penalty`
//! `<name>_ue.csv`: `step,ue,slice,rate_bps` (slice ids are 1-based)

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::StepResult;

pub struct TrajectoryWriter {
    steps: csv::Writer<BufWriter<File>>,
    ues: csv::Writer<BufWriter<File>>,
    ue_slices: Vec<usize>,
}

impl TrajectoryWriter {
    /// Create `<stem>.csv` and `<stem>_ue.csv` inside `dir`.
    pub fn create(dir: &Path, stem: &str, num_slices: usize, ue_slices: &[usize]) -> csv::Result<Self> {
        let mut steps = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("{stem}.csv")),
        )?));
        let mut header = vec!["step".to_string()];
        header.extend((1..=num_slices).map(|l| format!("q_slice{l}")));
        header.extend(["reward".into(), "penalty".into()]);
        steps.write_record(&header)?;
        let mut ues = csv::Writer::from_writer(BufWriter::new(File::create(
            dir.join(format!("{stem}_ue.csv")),
        )?));
        ues.write_record(["step", "ue", "slice", "rate_bps"])?;
        Ok(Self {
            steps,
            ues,
            ue_slices: ue_slices.to_vec(),
        })
    }

    pub fn record(&mut self, step: u64, result: &StepResult) -> csv::Result<()> {
        let mut row = vec![step.to_string()];
        row.extend(result.qos.values().iter().map(|q| q.to_string()));
        row.push(result.reward.total.to_string());
        row.push(result.reward.penalty.to_string());
        self.steps.write_record(&row)?;
        for (i, rate) in result.rates.iter().enumerate() {
            self.ues.write_record([
                step.to_string(),
                i.to_string(),
                (self.ue_slices[i] + 1).to_string(),
                rate.to_string(),
            ])?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.steps.flush()?;
        self.ues.flush()
    }
}
