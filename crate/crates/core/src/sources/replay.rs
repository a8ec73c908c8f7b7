//! Timed delivery of a recorded advertisement sequence.

use std::time::Duration;

use thiserror::Error;
use tokio::time::Instant;
use tokio_util::sync::CancellationToken;

use crate::identity::RawAdvertisement;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    /// Inter-arrival times are divided by this factor.
    Factor(f64),
    /// No pacing at all.
    Unbounded,
}

impl Default for Speed {
    fn default() -> Self {
        Speed::Factor(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("replay cancelled after {delivered} advertisements")]
    Cancelled { delivered: usize },
    #[error("replay speed must be positive and finite, got {0}")]
    InvalidSpeed(f64),
}

impl Speed {
    pub fn validate(self) -> Result<(), ReplayError> {
        match self {
            Speed::Factor(f) if !(f > 0.0 && f.is_finite()) => Err(ReplayError::InvalidSpeed(f)),
            _ => Ok(()),
        }
    }

    /// Wall-clock offset for a capture-time offset; `None` when unpaced.
    pub fn delay(self, elapsed_us: u64) -> Option<Duration> {
        match self {
            Speed::Factor(f) => Some(Duration::from_secs_f64(elapsed_us as f64 / 1e6 / f)),
            Speed::Unbounded => None,
        }
    }
}

/// Sorts a sequence into delivery order (stable on equal timestamps).
pub fn delivery_order(mut advs: Vec<RawAdvertisement>) -> Vec<RawAdvertisement> {
    advs.sort_by_key(|a| a.timestamp_us);
    advs
}

/// Feeds `advs` to `sink` in timestamp order, pacing by `speed`. Returns
/// the number delivered.
pub async fn replay<T, F>(
    items: Vec<T>,
    timestamp: impl Fn(&T) -> u64,
    speed: Speed,
    mut sink: F,
    cancel: &CancellationToken,
) -> Result<usize, ReplayError>
where
    F: FnMut(T),
{
    speed.validate()?;
    let Some(first) = items.first().map(&timestamp) else {
        return Ok(0);
    };
    let start = Instant::now();
    let mut delivered = 0;
    for item in items {
        if let Some(delay) = speed.delay(timestamp(&item).saturating_sub(first)) {
            tokio::select! {
                _ = cancel.cancelled() => return Err(ReplayError::Cancelled { delivered }),
                _ = tokio::time::sleep_until(start + delay) => {}
            }
        } else if delivered % 256 == 0 {
            tokio::task::yield_now().await;
        }
        if cancel.is_cancelled() {
            return Err(ReplayError::Cancelled { delivered });
        }
        sink(item);
        delivered += 1;
    }
    Ok(delivered)
}

/// [`replay`] for raw advertisements.
pub async fn replay_advertisements<F>(
    advs: Vec<RawAdvertisement>,
    speed: Speed,
    sink: F,
    cancel: &CancellationToken,
) -> Result<usize, ReplayError>
where
    F: FnMut(RawAdvertisement),
{
    replay(delivery_order(advs), |a| a.timestamp_us, speed, sink, cancel).await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{AddressType, MacAddr, PduType};

    fn adv(ts: u64, tag: u8) -> RawAdvertisement {
        RawAdvertisement {
            timestamp_us: ts,
            source_id: "r".into(),
            mac: MacAddr([0xC0, 0, 0, 0, 0, tag]),
            address_type: AddressType::Random,
            pdu_type: PduType::AdvInd,
            channel: Some(37),
            rssi: -50,
            payload: vec![],
        }
    }

    #[tokio::test]
    async fn empty_completes() {
        let n = replay_advertisements(vec![], Speed::Factor(1.0), |_| {}, &CancellationToken::new()).await;
        assert_eq!(n, Ok(0));
    }

    #[tokio::test]
    async fn paced_by_speed() {
        let mut times = Vec::new();
        let advs = vec![adv(0, 0), adv(1_000_000, 1)];
        replay_advertisements(
            advs,
            Speed::Factor(2.0),
            |_| times.push(std::time::Instant::now()),
            &CancellationToken::new(),
        )
        .await
        .unwrap();
        let gap = times[1] - times[0];
        assert!(gap >= Duration::from_millis(450) && gap <= Duration::from_millis(550), "{gap:?}");
    }

    #[tokio::test]
    async fn unbounded_keeps_order() {
        let advs = vec![adv(30, 3), adv(10, 1), adv(20, 2), adv(20, 4)];
        let mut tags = Vec::new();
        replay_advertisements(advs, Speed::Unbounded, |a| tags.push(a.mac.0[5]), &CancellationToken::new())
            .await
            .unwrap();
        assert_eq!(tags, vec![1, 2, 4, 3]);
    }

    #[tokio::test]
    async fn cancel_stops_delivery() {
        let cancel = CancellationToken::new();
        let advs = vec![adv(0, 0), adv(60_000_000, 1)];
        let c = cancel.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(20)).await;
            c.cancel();
        });
        let r = replay_advertisements(advs, Speed::Factor(1.0), |_| {}, &cancel).await;
        assert_eq!(r, Err(ReplayError::Cancelled { delivered: 1 }));
    }

    #[test]
    fn rejects_bad_speed() {
        assert!(Speed::Factor(0.0).validate().is_err());
        assert!(Speed::Factor(f64::INFINITY).validate().is_err());
        assert!(Speed::Unbounded.validate().is_ok());
    }
}
