//! Secure aggregation by additive secret sharing over a fixed-point ring.
//!
//! Each client splits its fixed-point encoded update into `K` parts that sum
//! to it modulo `Q`; the first `K-1` parts are uniform on `[0, Q)` and are
//! sent to the next clients in ring order, so any proper subset of parts is
//! indistinguishable from noise. Every client then uploads the sum of its
//! kept part and the parts it received, and the server's sum of those masked
//! vectors equals the sum of the original updates.
//!
//! In a two-party setup this protects against a curious server only: either
//! client can recover the other's update by subtracting its own from the
//! aggregate.

use crate::error::{Error, Result};
use crate::models::ParamVector;
use crate::numkit::SeededRng;

/// Fixed-point codec into the ring `[0, Q)`.
///
/// `scale` is the real value of one integer step; `n_clients` bounds how many
/// encoded vectors may be summed before decoding, which fixes the magnitude
/// budget `scale * Q / (2 * n_clients)` per coordinate.
#[derive(Debug, Clone, Copy)]
pub struct FixedCodec {
    pub scale: f64,
    pub modulus: u64,
    pub n_clients: usize,
}

impl FixedCodec {
    /// Q = 2^61 - 1 and scale = 2^-20 leave generous headroom for clipped
    /// gradients summed over any desk-scale federation.
    pub fn new(n_clients: usize) -> FixedCodec {
        FixedCodec {
            scale: (2.0f64).powi(-20),
            modulus: (1u64 << 61) - 1,
            n_clients,
        }
    }

    pub fn with_parameters(scale: f64, modulus: u64, n_clients: usize) -> Result<FixedCodec> {
        if !(scale > 0.0) {
            return Err(Error::invalid("codec scale must be positive"));
        }
        if modulus < 4 || n_clients == 0 {
            return Err(Error::invalid("codec modulus/clients out of range"));
        }
        Ok(FixedCodec {
            scale,
            modulus,
            n_clients,
        })
    }

    /// Largest encodable magnitude per coordinate for one client.
    pub fn magnitude_bound(&self) -> f64 {
        self.scale * (self.modulus as f64) / (2.0 * self.n_clients as f64)
    }
}

/// One client's share set: `parts[j]` for `j < K-1` is routed to client
/// `(owner + j + 1) mod N`; the last part stays with the owner.
#[derive(Debug, Clone)]
pub struct ShareBundle {
    pub owner: usize,
    pub parts: Vec<Vec<u64>>,
}

impl ShareBundle {
    pub fn k(&self) -> usize {
        self.parts.len()
    }

    /// Destination client for an outgoing part index (0-based over the K-1
    /// transmitted parts).
    pub fn route(&self, part: usize, n_clients: usize) -> usize {
        (self.owner + part + 1) % n_clients
    }

    pub fn kept_part(&self) -> &[u64] {
        self.parts.last().expect("bundle has at least 2 parts")
    }
}

/// Wire size of one share or masked vector: 64-bit little-endian words with a
/// 64-bit length prefix.
pub fn share_wire_bytes(len: usize) -> usize {
    8 + 8 * len
}

/// Serializes a ring vector in the wire format.
pub fn encode_share_wire(v: &[u64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(share_wire_bytes(v.len()));
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Maps real values into the ring by rounding to scale steps. Errors when a
/// value exceeds the per-client magnitude budget, since summing it with other
/// clients' encodings could wrap around.
pub fn encode_fixed(v: &ParamVector, codec: &FixedCodec) -> Result<Vec<u64>> {
    let bound = codec.magnitude_bound();
    let q = codec.modulus as i128;
    let mut out = Vec::with_capacity(v.len());
    for &x in v.as_slice() {
        if !x.is_finite() || x.abs() >= bound {
            return Err(Error::invalid(format!(
                "value {x} outside fixed-point budget {bound}"
            )));
        }
        let steps = (x / codec.scale).round() as i128;
        let ring = steps.rem_euclid(q) as u64;
        out.push(ring);
    }
    Ok(out)
}

/// Inverse of `encode_fixed` for a sum of at most `n_clients` encodings:
/// recenters ring values into `(-Q/2, Q/2]` before scaling back.
pub fn decode_fixed(ring: &[u64], codec: &FixedCodec) -> Vec<f64> {
    let q = codec.modulus as i128;
    ring.iter()
        .map(|&r| {
            let mut centered = r as i128;
            if centered > q / 2 {
                centered -= q;
            }
            centered as f64 * codec.scale
        })
        .collect()
}

/// Splits an encoded vector into `k` additive parts mod Q. The first `k-1`
/// parts are uniform and independent of the payload.
pub fn make_shares(
    encoded: &[u64],
    owner: usize,
    k: usize,
    codec: &FixedCodec,
    rng: &mut SeededRng,
) -> Result<ShareBundle> {
    if k < 2 || k > codec.n_clients {
        return Err(Error::invalid(format!(
            "share count {k} outside 2..={}",
            codec.n_clients
        )));
    }
    let q = codec.modulus;
    let mut parts: Vec<Vec<u64>> = Vec::with_capacity(k);
    let mut running: Vec<u64> = vec![0; encoded.len()];
    for _ in 0..k - 1 {
        let part: Vec<u64> = (0..encoded.len()).map(|_| rng.below(q)).collect();
        for (acc, &p) in running.iter_mut().zip(&part) {
            *acc = (*acc + p) % q;
        }
        parts.push(part);
    }
    // Last part closes the telescope: g - sum(previous) mod Q.
    let last: Vec<u64> = encoded
        .iter()
        .zip(&running)
        .map(|(&g, &s)| (q + g - s) % q)
        .collect();
    parts.push(last);
    Ok(ShareBundle { owner, parts })
}

/// Masked vector a client uploads: its kept part plus everything received.
pub fn combine_shares(
    kept: &[u64],
    received: &[&[u64]],
    expected_parts: usize,
    codec: &FixedCodec,
) -> Result<Vec<u64>> {
    if received.len() != expected_parts {
        return Err(Error::runtime(format!(
            "expected {expected_parts} received shares, got {}",
            received.len()
        )));
    }
    let q = codec.modulus;
    let mut out = kept.to_vec();
    for part in received {
        if part.len() != out.len() {
            return Err(Error::shape("share length mismatch"));
        }
        for (acc, &p) in out.iter_mut().zip(part.iter()) {
            *acc = (*acc + p) % q;
        }
    }
    Ok(out)
}

/// Ring sum of all masked vectors, without decoding or wraparound checks.
pub fn aggregate_masked(masked: &[Vec<u64>], codec: &FixedCodec) -> Result<Vec<u64>> {
    let first = masked
        .first()
        .ok_or_else(|| Error::invalid("no masked vectors to aggregate"))?;
    let q = codec.modulus;
    let mut out = vec![0u64; first.len()];
    for m in masked {
        if m.len() != out.len() {
            return Err(Error::shape("masked vector length mismatch"));
        }
        for (acc, &p) in out.iter_mut().zip(m.iter()) {
            *acc = (*acc + p) % q;
        }
    }
    Ok(out)
}

/// Sums all clients' masked vectors and decodes the aggregate. Errors when a
/// decoded coordinate sits at the representable bound, which indicates ring
/// wraparound (for example because a client dropped out and left uniform
/// noise in the sum).
pub fn secure_aggregate(
    masked: &[Vec<u64>],
    codec: &FixedCodec,
    template: &ParamVector,
) -> Result<ParamVector> {
    let ring = aggregate_masked(masked, codec)?;
    if ring.len() != template.len() {
        return Err(Error::shape("aggregate length mismatch"));
    }
    let decoded = decode_fixed(&ring, codec);
    // Correct aggregates of per-client-bounded encodings stay within half the
    // representable range; anything beyond that is wraparound or leftover
    // masking noise (e.g. a dropped client).
    let limit = codec.scale * (codec.modulus as f64) / 4.0;
    if decoded.iter().any(|v| v.abs() > limit) {
        return Err(Error::runtime(
            "secure aggregate exceeds the magnitude budget; ring wraparound suspected",
        ));
    }
    template.with_values(decoded)
}
