//! Per-process and per-thread runtime tuning for the numeric hot paths.
//!
//! Large transient buffers stay on the heap (no mmap churn), and the FPU
//! flushes subnormals to zero: deep ray samples produce transmittances far
//! below the normal f32 range, and subnormal arithmetic would otherwise
//! dominate the gradient math.

use std::cell::Cell;
use std::sync::OnceLock;

static HEAP_TUNED: OnceLock<()> = OnceLock::new();

thread_local! {
    static FPU_TUNED: Cell<bool> = const { Cell::new(false) };
}

pub fn ensure() {
    HEAP_TUNED.get_or_init(|| {
        #[cfg(target_os = "linux")]
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        }
    });
    FPU_TUNED.with(|f| {
        if !f.get() {
            #[cfg(target_arch = "x86_64")]
            unsafe {
                // FTZ (bit 15) + DAZ (bit 6) in MXCSR
                let mut csr: u32 = 0;
                std::arch::asm!("stmxcsr [{0}]", in(reg) &mut csr, options(nostack));
                csr |= 0x8040;
                std::arch::asm!("ldmxcsr [{0}]", in(reg) &csr, options(nostack));
            }
            f.set(true);
        }
    });
}
