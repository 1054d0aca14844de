//! Cache ablation with shuffles spread over a thread pool. Each replay is
//! still sequential: the cache's evolution along the stream is what is measured.

use rayon::prelude::*;

use cider_core::bench::{average_replays, AblationCurve, Bench, BenchPrompt, Replay};

use crate::error::{Error, Result};

pub fn cache_ablation(bench: &Bench<'_>, dataset: &[BenchPrompt], runs: usize, seed: u64) -> Result<AblationCurve> {
    if runs == 0 {
        return Err(Error::Schema("cache ablation needs at least one run".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Schema("cache ablation needs a non-empty dataset".into()));
    }
    let replays: Vec<(Replay, Replay)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let stream = bench.shuffled(dataset, run, seed);
            Ok((bench.replay(&stream, true)?, bench.replay(&stream, false)?))
        })
        .collect::<Result<_>>()?;
    let (on, off): (Vec<Replay>, Vec<Replay>) = replays.into_iter().unzip();
    Ok(average_replays(&on, &off))
}
