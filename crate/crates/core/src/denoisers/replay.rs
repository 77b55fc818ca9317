use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Mutex;

use super::protocol::Hello;
use super::{digest_f32, Denoiser, Descriptor, WindowContext};
use crate::error::{Error, Result};
use crate::grid::{f32_from_le_bytes, f32_le_bytes, Latent, WindowLatent};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureEntry {
    pub input_digest: u64,
    pub payload: Vec<f32>,
}

/// Recorded denoiser calls keyed by `(t, call index within t)`.
///
/// On disk: the 23-byte protocol HELLO, then one record per call of
/// `t:u32 call:u32 digest:u64 f32[W*H*C]`, all little-endian, in key order.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub hello: Hello,
    pub entries: BTreeMap<(u32, u32), FixtureEntry>,
}

impl Fixture {
    pub fn new(hello: Hello) -> Self {
        Fixture {
            hello,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        self.hello.write_to(&mut out)?;
        for (&(t, call), e) in &self.entries {
            out.write_all(&t.to_le_bytes())?;
            out.write_all(&call.to_le_bytes())?;
            out.write_all(&e.input_digest.to_le_bytes())?;
            out.write_all(&f32_le_bytes(&e.payload))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let hello = Hello::read_from(&mut input).map_err(|e| Error::Format(format!("fixture header: {e}")))?;
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        let record = 16 + 4 * hello.payload_len();
        if rest.len() % record != 0 {
            return Err(Error::Format(format!(
                "fixture body of {} bytes is not a multiple of the {record}-byte record",
                rest.len()
            )));
        }
        let mut entries = BTreeMap::new();
        for r in rest.chunks_exact(record) {
            let t = u32::from_le_bytes(r[0..4].try_into().unwrap());
            let call = u32::from_le_bytes(r[4..8].try_into().unwrap());
            let input_digest = u64::from_le_bytes(r[8..16].try_into().unwrap());
            entries.insert(
                (t, call),
                FixtureEntry {
                    input_digest,
                    payload: f32_from_le_bytes(&r[16..]),
                },
            );
        }
        Ok(Fixture { hello, entries })
    }
}

/// Wraps a denoiser and logs every call into a [`Fixture`].
///
/// Predictions are rounded to `f32` before being returned, so a recorded run
/// and its replay see exactly the same values.
pub struct RecordingDenoiser<D> {
    inner: D,
    fixture: Mutex<Fixture>,
}

impl<D: Denoiser> RecordingDenoiser<D> {
    pub fn new(inner: D, hello: Hello) -> Self {
        RecordingDenoiser {
            inner,
            fixture: Mutex::new(Fixture::new(hello)),
        }
    }

    pub fn into_fixture(self) -> Fixture {
        self.fixture.into_inner().expect("fixture poisoned")
    }
}

impl<D: Denoiser> Denoiser for RecordingDenoiser<D> {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        let eps = self.inner.predict_eps(window, ctx)?;
        let payload = eps.to_f32_vec();
        let out = Latent::from_f32(eps.width(), eps.height(), eps.channels(), &payload)?;
        self.fixture.lock().expect("fixture poisoned").entries.insert(
            (ctx.t as u32, ctx.window_index as u32),
            FixtureEntry {
                input_digest: digest_f32(&window.to_f32_vec()),
                payload,
            },
        );
        Ok(out)
    }

    fn descriptor(&self) -> Descriptor {
        self.inner.descriptor()
    }
}

/// Serves recorded predictions back, checking each input against its digest.
pub struct ReplayDenoiser {
    fixture: Fixture,
    seen: Mutex<Vec<((u32, u32), u64)>>,
}

impl ReplayDenoiser {
    pub fn new(fixture: Fixture) -> Self {
        ReplayDenoiser {
            fixture,
            seen: Mutex::new(Vec::new()),
        }
    }

    /// `(key, input digest)` of every call answered so far, in arrival order.
    pub fn observed(&self) -> Vec<((u32, u32), u64)> {
        self.seen.lock().expect("log poisoned").clone()
    }
}

impl Denoiser for ReplayDenoiser {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        let key = (ctx.t as u32, ctx.window_index as u32);
        let mut seen = self.seen.lock().expect("log poisoned");
        let entry = self.fixture.entries.get(&key).ok_or(Error::FixtureExhausted {
            t: ctx.t,
            call: ctx.window_index,
        })?;
        let digest = digest_f32(&window.to_f32_vec());
        seen.push((key, digest));
        if digest != entry.input_digest {
            return Err(Error::FixtureDiverged {
                t: ctx.t,
                call: ctx.window_index,
                expected: entry.input_digest,
                actual: digest,
            });
        }
        if entry.payload.len() != window.len() {
            return Err(Error::shape(window.len(), entry.payload.len()));
        }
        let mut out = Latent::from_f32(window.width(), window.height(), window.channels(), &entry.payload)?;
        out.timestep_tag = window.timestep_tag;
        Ok(out)
    }

    fn descriptor(&self) -> Descriptor {
        let mut buf = Vec::new();
        self.fixture.write_to(&mut buf).expect("writing to a Vec");
        Descriptor {
            name: "replay".into(),
            digest: super::digest_bytes(&buf),
        }
    }
}
