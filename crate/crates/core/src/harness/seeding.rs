use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent random streams derived from one master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Env = 2,
    Action = 3,
    Replay = 4,
    Eval = 5,
    Advantage = 6,
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}

/// Environment seeds for evaluation round `eval_index`; rounds never overlap
/// and do not touch any training stream.
pub fn eval_seeds(master: u64, eval_index: u64, count: usize) -> Vec<u64> {
    let mut rng = stream_rng(master, Stream::Eval);
    rng.set_word_pos(eval_index as u128 * count as u128 * 2);
    (0..count).map(|_| rng.gen()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_differ_and_repeat() {
        let a: u64 = stream_rng(7, Stream::Env).gen();
        let b: u64 = stream_rng(7, Stream::Action).gen();
        assert_ne!(a, b);
        assert_eq!(a, stream_rng(7, Stream::Env).gen::<u64>());
    }

    #[test]
    fn eval_rounds_tile_the_stream() {
        let first = eval_seeds(3, 0, 4);
        let second = eval_seeds(3, 1, 4);
        let both = eval_seeds(3, 0, 8);
        assert_eq!([first, second].concat(), both);
    }
}
