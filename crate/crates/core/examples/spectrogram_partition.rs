//! Log-power spectrogram of a synthetic 44.1 kHz voice and its uniform subband slices.
//!
//! `cargo run --example spectrogram_partition`

use subband::dsp::{
    logpower_spectrogram, partition_spectrogram, read_spectrogram_cache, stack_subbands, write_spectrogram_cache,
    StftConfig, SubbandPartition,
};
use subband::synth::{synth_bonafide, synth_deepfake, SynthConfig};

fn mean(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum::<f64>() / values.len() as f64
}

fn main() -> subband::Result<()> {
    let cfg = SynthConfig { duration_secs: 1.0, ..SynthConfig::default() };
    let stft = StftConfig::default();
    let bona = logpower_spectrogram(&synth_bonafide(&cfg, 0)?, &stft)?;
    let fake = logpower_spectrogram(&synth_deepfake(&cfg, 0)?, &stft)?;
    println!(
        "{} bins x {} frames, {:.2} Hz per bin, [{}, {}] Hz",
        bona.freq_bins(),
        bona.frames(),
        bona.bin_hz(),
        bona.f_lo(),
        bona.f_hi()
    );

    for n in SubbandPartition::ALLOWED {
        let part = SubbandPartition::for_spectrogram(n, &bona)?;
        let b = partition_spectrogram(&bona, &part)?;
        let f = partition_spectrogram(&fake, &part)?;
        assert_eq!(stack_subbands(&b)?, bona);
        println!("N = {n}");
        for ((slice, fslice), &(lo, hi)) in b.iter().zip(&f).zip(part.bin_ranges()) {
            println!(
                "  [{:>8.1}, {:>8.1}] Hz  bins {lo:>4}..{hi:<4}  mean log-power bonafide {:>7.2}  deepfake {:>7.2}",
                slice.f_lo(),
                slice.f_hi(),
                mean(slice.values()),
                mean(fslice.values())
            );
        }
    }

    let path = std::env::temp_dir().join("subband_example.sbsp");
    write_spectrogram_cache(&path, &bona)?;
    assert_eq!(read_spectrogram_cache(&path)?, bona);
    println!("cached spectrogram at {}", path.display());
    Ok(())
}
