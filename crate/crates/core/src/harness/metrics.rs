use std::io::Write;

use crate::algos::EpisodeMetrics;
use crate::error::Result;

pub const METRICS_HEADER: &str =
    "episode,env_steps,critic_loss,actor_loss,alpha,policy_entropy,eval_return,eval_win_rate";

fn float(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.8e}")).unwrap_or_default()
}

/// One CSV row, without the trailing newline. Floats carry 9 significant digits.
pub fn format_row(m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        m.episode,
        m.env_steps,
        float(m.critic_loss),
        float(m.actor_loss),
        float(m.alpha),
        float(m.policy_entropy),
        float(m.eval.as_ref().map(|e| e.mean_return)),
        float(m.eval.as_ref().map(|e| e.win_rate)),
    )
}

/// Streams training records as CSV; the header is written on construction.
pub struct MetricsWriter<W: Write> {
    out: W,
    rows: usize,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out, rows: 0 })
    }

    pub fn write(&mut self, m: &EpisodeMetrics) -> Result<()> {
        writeln!(self.out, "{}", format_row(m))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::EvalRecord;

    fn record(episode: usize, eval: bool) -> EpisodeMetrics {
        EpisodeMetrics {
            episode,
            env_steps: 40 * episode as u64,
            critic_loss: Some(0.125),
            actor_loss: Some(-1.5),
            alpha: Some(1.0),
            policy_entropy: None,
            eval: eval.then(|| EvalRecord {
                episode,
                n_episodes: 20,
                mean_return: 11.0,
                win_rate: 0.95,
                mean_length: 1.0,
                greedy: true,
            }),
        }
    }

    #[test]
    fn zero_records_give_header_only() {
        let out = MetricsWriter::new(Vec::new()).unwrap().finish().unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn eval_columns_only_on_eval_rows() {
        let mut w = MetricsWriter::new(Vec::new()).unwrap();
        for ep in 99..=101 {
            w.write(&record(ep, ep == 100)).unwrap();
        }
        assert_eq!(w.rows(), 3);
        let text = String::from_utf8(w.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(text.ends_with('\n'));
        assert_eq!(lines[1], "99,3960,1.25000000e-1,-1.50000000e0,1.00000000e0,,,");
        assert_eq!(lines[2], "100,4000,1.25000000e-1,-1.50000000e0,1.00000000e0,,1.10000000e1,9.50000000e-1");
        assert!(lines[3].ends_with(",,,"));
        for l in &lines {
            assert_eq!(l.split(',').count(), 8);
        }
    }
}
