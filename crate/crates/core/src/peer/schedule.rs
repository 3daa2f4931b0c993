//! Who talks to whom, and who initiates.
//!
//! The pairing is the circle-method round-robin tournament. With `m` the
//! roster size rounded up to even and `q = m - 1`, slot `m - 1` stays fixed
//! and at tick `t` (round `r = t mod q`) a player `i < q` meets
//! `j = (2r - i) mod q`, or the fixed slot when `j == i`. For an odd roster
//! the fixed slot is a dummy and its partner idles for that tick.

use crate::wire::NodeId;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("a node cannot pair with itself (node {0})")]
    SameNode(NodeId),
    #[error("roster size {0} outside 2..=256")]
    BadRosterSize(usize),
    #[error("node {node} not in a roster of {n}")]
    NotInRoster { node: NodeId, n: usize },
}

fn check_roster(node: NodeId, n: usize) -> Result<(), ScheduleError> {
    if !(2..=256).contains(&n) {
        return Err(ScheduleError::BadRosterSize(n));
    }
    if node.index() >= n {
        return Err(ScheduleError::NotInRoster { node, n });
    }
    Ok(())
}

/// Number of ticks after which the schedule repeats: `n - 1` for even
/// rosters, `n` for odd ones.
pub fn rotation_len(n: usize) -> usize {
    if n.is_multiple_of(2) {
        n - 1
    } else {
        n
    }
}

/// Partner of `self_id` at `tick`, or `None` when the node idles.
pub fn partner_at_tick(self_id: NodeId, n: usize, tick: u64) -> Result<Option<NodeId>, ScheduleError> {
    check_roster(self_id, n)?;
    let m = n + n % 2;
    let q = (m - 1) as u64;
    let r = tick % q;
    let i = self_id.index() as u64;
    let partner = if i == q {
        r
    } else {
        let j = (2 * r + q - i) % q;
        if j == i {
            q
        } else {
            j
        }
    };
    Ok(if partner as usize >= n { None } else { Some(NodeId(partner as u8)) })
}

/// The node that starts rounds for the unordered pair `{i, j}`.
///
/// With `d = (j - i) mod n`, `i` initiates iff `1 <= d <= (n-1)/2`, or for
/// even `n` when `d == n/2` and `i < j`.
pub fn initiator_of(i: NodeId, j: NodeId, n: usize) -> Result<NodeId, ScheduleError> {
    if i == j {
        return Err(ScheduleError::SameNode(i));
    }
    check_roster(i, n)?;
    check_roster(j, n)?;
    let d = (j.index() + n - i.index()) % n;
    let i_starts = (1..=(n - 1) / 2).contains(&d) || (n.is_multiple_of(2) && d == n / 2 && i < j);
    Ok(if i_starts { i } else { j })
}
