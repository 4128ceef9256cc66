//! Confidentiality and integrity for off-chip tile traffic.
//!
//! Every 64-byte DRAM block is sealed encrypt-then-MAC. Confidentiality is
//! AES-128 CTR with a never-repeating counter assembled from the block's
//! coordinates (fmap, producer layer, version, block index, lane), so version
//! bumps re-key the stream without any stored nonce. Integrity is a SHA-256
//! tag over a platform secret plus the same coordinates and the ciphertext;
//! tags bind position *and* version, which is what turns replay of a stale
//! block into a tag mismatch. Tags can be stored per block (truncated) or
//! XOR-folded into per-layer accumulators that verify a whole layer at its
//! consumer boundary with constant on-chip state.

use std::fmt;
use std::ops::{BitXor, BitXorAssign};

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Bytes in one sealed DRAM block.
pub const BLOCK_BYTES: usize = 64;
/// AES lanes per block.
const LANES: usize = BLOCK_BYTES / 16;

/// Key material fixed for one boot session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionKey {
    /// Shared platform secret folded into every tag.
    pub platform_secret: [u8; 16],
    /// Accelerator identity (first half of the AES key).
    pub accel_id: [u8; 8],
    /// Per-boot randomness (second half of the AES key).
    pub boot_random: [u8; 8],
}

impl SessionKey {
    /// Deterministic key material for reproducible runs.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut platform_secret = [0u8; 16];
        let mut accel_id = [0u8; 8];
        let mut boot_random = [0u8; 8];
        rng.fill_bytes(&mut platform_secret);
        rng.fill_bytes(&mut accel_id);
        rng.fill_bytes(&mut boot_random);
        SessionKey {
            platform_secret,
            accel_id,
            boot_random,
        }
    }

    pub fn aes_key(&self) -> [u8; 16] {
        let mut key = [0u8; 16];
        key[..8].copy_from_slice(&self.accel_id);
        key[8..].copy_from_slice(&self.boot_random);
        key
    }
}

/// Coordinates that make a block's counter and tag unique.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMeta {
    /// Producer layer; 0 marks host-provisioned content (weights, input).
    pub layer: u32,
    pub fmap: u32,
    pub vn: u32,
    pub block_index: u32,
}

/// A 256-bit tag. XOR composes tags into layer aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Mac(pub [u8; 32]);

impl Mac {
    pub const ZERO: Mac = Mac([0; 32]);

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    /// Truncated form kept in DRAM next to the data.
    pub fn stored_tag(&self) -> [u8; 8] {
        self.0[..8].try_into().unwrap()
    }
}

impl BitXor for Mac {
    type Output = Mac;
    fn bitxor(mut self, rhs: Mac) -> Mac {
        self ^= rhs;
        self
    }
}

impl BitXorAssign for Mac {
    fn bitxor_assign(&mut self, rhs: Mac) {
        for (a, b) in self.0.iter_mut().zip(rhs.0.iter()) {
            *a ^= b;
        }
    }
}

impl fmt::Display for Mac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

fn aes_encrypt(cipher: &Aes128, block: [u8; 16]) -> [u8; 16] {
    let mut b = GenericArray::from(block);
    cipher.encrypt_block(&mut b);
    b.into()
}

/// Ready-to-use sealing engine for one boot session.
#[derive(Clone)]
pub struct Engine {
    cipher: Aes128,
    platform_secret: [u8; 16],
}

impl Engine {
    pub fn new(key: &SessionKey) -> Self {
        Engine {
            cipher: Aes128::new(GenericArray::from_slice(&key.aes_key())),
            platform_secret: key.platform_secret,
        }
    }

    /// Counter block for one 16-byte lane:
    /// `fmap(4) || layer(4) || vn(4) || block_index(3) || lane(1)`.
    fn counter(meta: BlockMeta, lane: u8) -> [u8; 16] {
        assert!(
            meta.block_index < 1 << 24,
            "block index {} exceeds the 24-bit counter field",
            meta.block_index
        );
        let mut ctr = [0u8; 16];
        ctr[0..4].copy_from_slice(&meta.fmap.to_be_bytes());
        ctr[4..8].copy_from_slice(&meta.layer.to_be_bytes());
        ctr[8..12].copy_from_slice(&meta.vn.to_be_bytes());
        ctr[12..15].copy_from_slice(&meta.block_index.to_be_bytes()[1..]);
        ctr[15] = lane;
        ctr
    }

    /// CTR-seals one block; its own inverse with the same coordinates.
    pub fn encrypt_block(&self, meta: BlockMeta, data: &[u8; BLOCK_BYTES]) -> [u8; BLOCK_BYTES] {
        let mut out = [0u8; BLOCK_BYTES];
        for lane in 0..LANES {
            let ks = aes_encrypt(&self.cipher, Self::counter(meta, lane as u8));
            for i in 0..16 {
                out[lane * 16 + i] = data[lane * 16 + i] ^ ks[i];
            }
        }
        out
    }

    pub fn decrypt_block(&self, meta: BlockMeta, data: &[u8; BLOCK_BYTES]) -> [u8; BLOCK_BYTES] {
        self.encrypt_block(meta, data)
    }

    /// Tag over `secret(16) || layer(4) || fmap(4) || vn(4) || index(4) ||
    /// ciphertext(64)`.
    pub fn block_mac(&self, meta: BlockMeta, block: &[u8; BLOCK_BYTES]) -> Mac {
        let mut pre = [0u8; 96];
        pre[0..16].copy_from_slice(&self.platform_secret);
        pre[16..20].copy_from_slice(&meta.layer.to_be_bytes());
        pre[20..24].copy_from_slice(&meta.fmap.to_be_bytes());
        pre[24..28].copy_from_slice(&meta.vn.to_be_bytes());
        pre[28..32].copy_from_slice(&meta.block_index.to_be_bytes());
        pre[32..96].copy_from_slice(block);
        Mac(Sha256::digest(pre).into())
    }

    /// One-line exchange form:
    /// `hex(secret),layer,fmap,vn,index,hex(block) -> hex(mac)`.
    pub fn mac_test_vector(&self, meta: BlockMeta, block: &[u8; BLOCK_BYTES]) -> String {
        format!(
            "{},{},{},{},{},{} -> {}",
            hex::encode(self.platform_secret),
            meta.layer,
            meta.fmap,
            meta.vn,
            meta.block_index,
            hex::encode(block),
            self.block_mac(meta, block),
        )
    }
}

/// Deterministic synthetic plaintext for a block version; the simulator
/// carries no real tensor math, only verifiable content.
pub fn synth_block(meta: BlockMeta) -> [u8; BLOCK_BYTES] {
    let mut out = [0u8; BLOCK_BYTES];
    let mut x = 0x9e37_79b9_7f4a_7c15u64
        ^ ((meta.layer as u64) << 48)
        ^ ((meta.fmap as u64) << 32)
        ^ ((meta.block_index as u64) << 8)
        ^ meta.vn as u64;
    for chunk in out.chunks_mut(8) {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        chunk.copy_from_slice(&x.to_be_bytes());
    }
    out
}

/// Per-layer XOR aggregates. A layer's writes cancel against its own
/// partial read-backs plus its consumer's first reads; everything else a
/// layer reads (repeat input reads, the weight stream) must reproduce a
/// reference aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacAccumulators {
    pub layer_id: u32,
    /// Every output-block write.
    pub mac_w: Mac,
    /// Every within-layer partial read-back.
    pub mac_r: Mac,
    /// First read of each distinct input block.
    pub mac_fr: Mac,
    /// Repeat input reads plus the weight stream.
    pub mac_ir: Mac,
    /// Reference `mac_ir` must reproduce.
    pub ir_expected: Mac,
}

impl MacAccumulators {
    pub fn new(layer_id: u32) -> Self {
        MacAccumulators {
            layer_id,
            mac_w: Mac::ZERO,
            mac_r: Mac::ZERO,
            mac_fr: Mac::ZERO,
            mac_ir: Mac::ZERO,
            ir_expected: Mac::ZERO,
        }
    }

    pub fn fold_write(&mut self, m: Mac) {
        self.mac_w ^= m;
    }

    pub fn fold_read_back(&mut self, m: Mac) {
        self.mac_r ^= m;
    }

    pub fn fold_first_read(&mut self, m: Mac) {
        self.mac_fr ^= m;
    }

    pub fn fold_repeat_read(&mut self, observed: Mac, reference: Mac) {
        self.mac_ir ^= observed;
        self.ir_expected ^= reference;
    }

    /// Repeat reads and the weight stream returned provisioned content.
    pub fn repeats_consistent(&self) -> bool {
        self.mac_ir == self.ir_expected
    }
}

/// Producer/consumer boundary identity: every version the producer wrote is
/// covered exactly once — partials by its own read-backs, finals by the
/// consumer's first reads.
pub fn boundary_holds(producer: &MacAccumulators, consumer_first_reads: Mac) -> bool {
    producer.mac_w == producer.mac_r ^ consumer_first_reads
}

/// Which integrity register pair disagreed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerifyFailure {
    /// Producer writes not covered by read-backs plus consumer first reads.
    WriteBoundary,
    /// A repeat read or weight read returned content that differs from its
    /// first-read (or host-provisioned) reference.
    InputStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerificationResult {
    Pass,
    Fail(VerifyFailure),
}

impl VerificationResult {
    pub fn is_pass(&self) -> bool {
        matches!(self, Self::Pass)
    }
}

impl fmt::Display for VerificationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Pass => write!(f, "pass"),
            Self::Fail(VerifyFailure::WriteBoundary) => write!(f, "fail:write-boundary"),
            Self::Fail(VerifyFailure::InputStream) => write!(f, "fail:input-stream"),
        }
    }
}

/// Retirement check run when layer `cur` finishes consuming `prev`'s output:
/// the write/read boundary across the two layers, then `cur`'s own repeat
/// stream. Empty layers hold vacuously (all registers zero).
pub fn verify_layer(prev: &MacAccumulators, cur: &MacAccumulators) -> VerificationResult {
    if !boundary_holds(prev, cur.mac_fr) {
        VerificationResult::Fail(VerifyFailure::WriteBoundary)
    } else if !cur.repeats_consistent() {
        VerificationResult::Fail(VerifyFailure::InputStream)
    } else {
        VerificationResult::Pass
    }
}

/// Two alternating accumulator banks: a layer's bank stays live while its
/// consumer folds first reads, then retires.
#[derive(Debug, Default)]
pub struct RegisterFile {
    banks: [Option<MacAccumulators>; 2],
}

impl RegisterFile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Claims the layer's bank; its previous occupant must have retired.
    pub fn open_layer(&mut self, layer_id: u32) {
        let slot = &mut self.banks[(layer_id % 2) as usize];
        assert!(
            slot.is_none(),
            "bank for layer {layer_id} still live; retire its occupant first"
        );
        *slot = Some(MacAccumulators::new(layer_id));
    }

    pub fn layer(&self, layer_id: u32) -> &MacAccumulators {
        self.banks[(layer_id % 2) as usize]
            .as_ref()
            .filter(|a| a.layer_id == layer_id)
            .expect("layer bank not open")
    }

    pub fn layer_mut(&mut self, layer_id: u32) -> &mut MacAccumulators {
        self.banks[(layer_id % 2) as usize]
            .as_mut()
            .filter(|a| a.layer_id == layer_id)
            .expect("layer bank not open")
    }

    pub fn retire(&mut self, layer_id: u32) -> MacAccumulators {
        let slot = &mut self.banks[(layer_id % 2) as usize];
        match slot {
            Some(a) if a.layer_id == layer_id => slot.take().unwrap(),
            _ => panic!("layer bank not open"),
        }
    }
}
