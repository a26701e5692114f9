use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{assemble, instantiate, CheckpointPolicy, Fuel, Instance, PAGE_SIZE};

const WORKSPACE: &str = "\
.func main 0 1
    const.i64 0
    local.set 0
top:
    local.get 0
    const.i64 1
    i64.add
    local.set 0
    local.get 0
    const.i64 1000
    i64.lt_s
    br_if top
    local.get 0
    halt
.end
";

/// Instance with `bytes` of memory (rounded up to whole pages), paused at
/// its first loop stable point. Each page is half seeded random bytes and
/// half zeros, so it compresses about 2:1.
pub fn workspace_instance(bytes: usize, seed: u64) -> Instance {
    let pages = bytes.div_ceil(PAGE_SIZE).max(1);
    let m = assemble(&format!(".memory {pages}\n{WORKSPACE}")).expect("workspace program assembles");
    let mut inst = instantiate(&m, CheckpointPolicy::Loop);
    inst.run_until_stable(Fuel::Unlimited).expect("workspace reaches its loop");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for page in inst.memory_mut().chunks_mut(PAGE_SIZE) {
        rng.fill_bytes(&mut page[..PAGE_SIZE / 2]);
    }
    inst
}

