//! Cycle-level behavioral model of the approximate-convolution unit.
//!
//! The unit convolves a 4x4 window fetched from memory with a resident 3x3
//! kernel, producing the 2x2 valid output. One run is
//!
//! ```text
//! IDLE -issue-> GET_DATA x16 -> STAGE_1 -> STAGE_2 -> STAGE_3 -> DONE -ack-> IDLE
//! ```
//!
//! GET_DATA fetches one word per cycle; the three stages take one cycle each,
//! so every run reaches DONE after exactly 19 steps.
//!
//! STAGE_2 keeps a product iff `MSB(x) + MSB(w) + T > MSB_max`, i.e. ties at
//! a gap of exactly `T` are skipped, the same rule as [`crate::msb::approx_dot`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::AccelError;
use crate::msb::{msb_pos, MsbMagnitude, ProductMagnitude, PruneThreshold};

pub const WINDOW_WORDS: u32 = 16;
/// Steps from GET_DATA to DONE.
pub const RUN_CYCLES: u64 = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccelState {
    Idle,
    GetData,
    Stage1,
    Stage2,
    Stage3,
    Done,
}

impl AccelState {
    pub fn name(self) -> &'static str {
        match self {
            AccelState::Idle => "IDLE",
            AccelState::GetData => "GET_DATA",
            AccelState::Stage1 => "STAGE_1",
            AccelState::Stage2 => "STAGE_2",
            AccelState::Stage3 => "STAGE_3",
            AccelState::Done => "DONE",
        }
    }

    /// Whether `self -> next` is an edge of the controller.
    pub fn can_transition_to(self, next: AccelState) -> bool {
        use AccelState::*;
        matches!(
            (self, next),
            (Idle, GetData)
                | (GetData, GetData)
                | (GetData, Stage1)
                | (Stage1, Stage2)
                | (Stage2, Stage3)
                | (Stage3, Done)
                | (Done, Done)
                | (Done, Idle)
        )
    }
}

impl fmt::Display for AccelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Resident kernel with its MSBs computed at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelRegister {
    coeffs: [i32; 9],
    msbs: [MsbMagnitude; 9],
}

impl KernelRegister {
    pub fn coeffs(&self) -> &[i32; 9] {
        &self.coeffs
    }

    pub fn msbs(&self) -> &[MsbMagnitude; 9] {
        &self.msbs
    }
}

pub fn load_kernel(coeffs: [i32; 9]) -> KernelRegister {
    KernelRegister {
        coeffs,
        msbs: coeffs.map(msb_pos),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowBuffer {
    pub values: [i32; 16],
    /// Valid only once STAGE_1 has run.
    pub msbs: [MsbMagnitude; 16],
    pub msbs_valid: bool,
}

impl Default for WindowBuffer {
    fn default() -> Self {
        Self {
            values: [0; 16],
            msbs: [MsbMagnitude::Zero; 16],
            msbs_valid: false,
        }
    }
}

/// Operands of one invocation: the window's word address and its length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccelRequest {
    pub base_addr: u32,
    pub size: u32,
}

impl AccelRequest {
    pub fn window(base_addr: u32) -> Self {
        Self {
            base_addr,
            size: WINDOW_WORDS,
        }
    }
}

/// Word-addressed read port.
pub trait WordMemory {
    fn read_word(&self, addr: u32) -> Option<i32>;
}

impl WordMemory for [i32] {
    fn read_word(&self, addr: u32) -> Option<i32> {
        self.get(addr as usize).copied()
    }
}

impl WordMemory for Vec<i32> {
    fn read_word(&self, addr: u32) -> Option<i32> {
        self.as_slice().read_word(addr)
    }
}

/// One pruning decision made in STAGE_2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductDecision {
    /// Output index 0..4 (row-major over the 2x2 result).
    pub output: usize,
    /// Kernel tap 0..9 (row-major).
    pub tap: usize,
    pub x: i32,
    pub w: i32,
    pub magnitude: ProductMagnitude,
    pub msb_max: ProductMagnitude,
    /// `msb_max - magnitude`; absent for zero products.
    pub delta: Option<u32>,
    pub kept: bool,
    /// The evaluated product, present only when kept.
    pub product: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceDetail {
    Fetch {
        addr: u32,
        value: i32,
    },
    MsbAnalysis {
        window_msbs: Vec<MsbMagnitude>,
        kernel_msbs: Vec<MsbMagnitude>,
    },
    Prune {
        msb_max: [ProductMagnitude; 4],
        decisions: Vec<ProductDecision>,
    },
    Accumulate {
        partial_sums: [i64; 4],
    },
    /// Stepped while DONE without an acknowledge.
    AwaitingAck,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub cycle: u64,
    pub state: AccelState,
    pub detail: TraceDetail,
}

impl TraceEvent {
    /// Decisions in this event that evaluated a product.
    pub fn evaluated_products(&self) -> usize {
        match &self.detail {
            TraceDetail::Prune { decisions, .. } => decisions.iter().filter(|d| d.kept).count(),
            _ => 0,
        }
    }
}

/// The accelerator, bound to a memory port. It is its own run handle: a run
/// is issued, stepped, read and acknowledged through it.
pub struct ConvAccelerator<'m, M: WordMemory + ?Sized> {
    memory: &'m M,
    kernel: Option<KernelRegister>,
    state: AccelState,
    request: Option<AccelRequest>,
    threshold: Option<PruneThreshold>,
    window: WindowBuffer,
    fetched: u32,
    products: [[Option<i64>; 9]; 4],
    outputs: [i64; 4],
    cycle: u64,
    trace: Vec<TraceEvent>,
}

impl<'m, M: WordMemory + ?Sized> ConvAccelerator<'m, M> {
    pub fn new(memory: &'m M) -> Self {
        Self {
            memory,
            kernel: None,
            state: AccelState::Idle,
            request: None,
            threshold: None,
            window: WindowBuffer::default(),
            fetched: 0,
            products: [[None; 9]; 4],
            outputs: [0; 4],
            cycle: 0,
            trace: Vec::new(),
        }
    }

    pub fn with_kernel(memory: &'m M, coeffs: [i32; 9]) -> Self {
        let mut acc = Self::new(memory);
        acc.kernel = Some(load_kernel(coeffs));
        acc
    }

    /// Loads a kernel; only allowed while idle.
    pub fn load_kernel(&mut self, coeffs: [i32; 9]) -> Result<&KernelRegister, AccelError> {
        if self.state != AccelState::Idle {
            return Err(AccelError::Busy(self.state.to_string()));
        }
        Ok(self.kernel.insert(load_kernel(coeffs)))
    }

    pub fn kernel(&self) -> Option<&KernelRegister> {
        self.kernel.as_ref()
    }

    pub fn state(&self) -> AccelState {
        self.state
    }

    pub fn window(&self) -> &WindowBuffer {
        &self.window
    }

    /// Cycles stepped in the current run.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    /// Status word written back to the destination register: 1 once the four
    /// outputs are ready, 0 otherwise.
    pub fn result_register(&self) -> u32 {
        u32::from(self.state == AccelState::Done)
    }

    /// Starts a run: captures the operands and enters GET_DATA.
    pub fn issue(
        &mut self,
        request: AccelRequest,
        threshold: PruneThreshold,
    ) -> Result<(), AccelError> {
        if self.state != AccelState::Idle {
            return Err(AccelError::Busy(self.state.to_string()));
        }
        if request.size != WINDOW_WORDS {
            return Err(AccelError::BadRequestSize(request.size));
        }
        if self.kernel.is_none() {
            return Err(AccelError::NoKernel);
        }
        self.clear_run();
        self.request = Some(request);
        self.threshold = Some(threshold);
        self.state = AccelState::GetData;
        Ok(())
    }

    /// Advances one clock cycle and returns the state entered plus the event
    /// recorded for the cycle.
    pub fn step(&mut self) -> Result<(AccelState, Option<TraceEvent>), AccelError> {
        let (Some(kernel), Some(request), Some(threshold)) =
            (self.kernel, self.request, self.threshold)
        else {
            return Err(AccelError::NotRunning);
        };
        let (detail, next) = match self.state {
            AccelState::Idle => return Err(AccelError::NotRunning),
            AccelState::GetData => {
                let addr = request.base_addr.wrapping_add(self.fetched);
                let value = self
                    .memory
                    .read_word(addr)
                    .ok_or(AccelError::MemoryFault(addr))?;
                self.window.values[self.fetched as usize] = value;
                self.fetched += 1;
                let next = if self.fetched == WINDOW_WORDS {
                    AccelState::Stage1
                } else {
                    AccelState::GetData
                };
                (TraceDetail::Fetch { addr, value }, next)
            }
            AccelState::Stage1 => {
                self.window.msbs = self.window.values.map(msb_pos);
                self.window.msbs_valid = true;
                let detail = TraceDetail::MsbAnalysis {
                    window_msbs: self.window.msbs.to_vec(),
                    kernel_msbs: kernel.msbs.to_vec(),
                };
                (detail, AccelState::Stage2)
            }
            AccelState::Stage2 => {
                let (msb_max, decisions) = self.prune_and_multiply(&kernel, threshold);
                (
                    TraceDetail::Prune { msb_max, decisions },
                    AccelState::Stage3,
                )
            }
            AccelState::Stage3 => {
                for (y, row) in self.outputs.iter_mut().zip(&self.products) {
                    *y = row.iter().flatten().sum();
                }
                (
                    TraceDetail::Accumulate {
                        partial_sums: self.outputs,
                    },
                    AccelState::Done,
                )
            }
            AccelState::Done => (TraceDetail::AwaitingAck, AccelState::Done),
        };
        debug_assert!(self.state.can_transition_to(next));
        self.cycle += 1;
        self.state = next;
        let event = TraceEvent {
            cycle: self.cycle,
            state: next,
            detail,
        };
        self.trace.push(event.clone());
        Ok((next, Some(event)))
    }

    /// Steps until DONE; returns the number of cycles taken by this call.
    pub fn run_to_done(&mut self) -> Result<u64, AccelError> {
        let start = self.cycle;
        while self.state != AccelState::Done {
            self.step()?;
        }
        Ok(self.cycle - start)
    }

    /// The 2x2 result `(y0, y1, y2, y3)`, row-major.
    pub fn read_outputs(&self) -> Result<[i32; 4], AccelError> {
        if self.state != AccelState::Done {
            return Err(AccelError::NotDone(self.state.to_string()));
        }
        let mut out = [0i32; 4];
        for (index, (&v, slot)) in self.outputs.iter().zip(out.iter_mut()).enumerate() {
            *slot = i32::try_from(v).map_err(|_| AccelError::OutputOverflow { index, value: v })?;
        }
        Ok(out)
    }

    /// Per output, which of the 9 products were evaluated.
    pub fn kept_sets(&self) -> [[bool; 9]; 4] {
        self.products.map(|row| row.map(|p| p.is_some()))
    }

    /// Releases DONE and returns to IDLE with cleared buffers.
    pub fn acknowledge(&mut self) -> Result<(), AccelError> {
        if self.state != AccelState::Done {
            return Err(AccelError::NotDone(self.state.to_string()));
        }
        self.clear_run();
        self.state = AccelState::Idle;
        Ok(())
    }

    fn clear_run(&mut self) {
        self.request = None;
        self.threshold = None;
        self.window = WindowBuffer::default();
        self.fetched = 0;
        self.products = [[None; 9]; 4];
        self.outputs = [0; 4];
        self.cycle = 0;
        self.trace.clear();
    }

    fn prune_and_multiply(
        &mut self,
        kernel: &KernelRegister,
        threshold: PruneThreshold,
    ) -> ([ProductMagnitude; 4], Vec<ProductDecision>) {
        let mut maxima = [ProductMagnitude::Zero; 4];
        let mut decisions = Vec::with_capacity(36);
        #[allow(clippy::needless_range_loop)]
        for output in 0..4 {
            let (oy, ox) = (output / 2, output % 2);
            let mut mags = [ProductMagnitude::Zero; 9];
            let mut xs = [0i32; 9];
            for (tap, (m, x)) in mags.iter_mut().zip(xs.iter_mut()).enumerate() {
                let idx = (oy + tap / 3) * 4 + ox + tap % 3;
                *x = self.window.values[idx];
                *m = match (self.window.msbs[idx], kernel.msbs[tap]) {
                    (MsbMagnitude::Pos(a), MsbMagnitude::Pos(b)) => ProductMagnitude::Sum(a + b),
                    _ => ProductMagnitude::Zero,
                };
            }
            let msb_max = reduction_tree_max(&mags);
            maxima[output] = msb_max;
            for tap in 0..9 {
                let w = kernel.coeffs[tap];
                let kept = match (mags[tap], msb_max) {
                    (ProductMagnitude::Sum(m), ProductMagnitude::Sum(max)) => {
                        u64::from(m) + u64::from(threshold.t_int()) > u64::from(max)
                    }
                    _ => false,
                };
                let product = kept.then(|| i64::from(xs[tap]) * i64::from(w));
                self.products[output][tap] = product;
                decisions.push(ProductDecision {
                    output,
                    tap,
                    x: xs[tap],
                    w,
                    magnitude: mags[tap],
                    msb_max,
                    delta: mags[tap].gap_below(msb_max),
                    kept,
                    product,
                });
            }
        }
        (maxima, decisions)
    }
}

/// Pairwise max over 9 inputs, 4 levels deep.
fn reduction_tree_max(values: &[ProductMagnitude; 9]) -> ProductMagnitude {
    let mut level: Vec<ProductMagnitude> = values.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|c| if c.len() == 2 { c[0].max(c[1]) } else { c[0] })
            .collect();
    }
    level[0]
}
