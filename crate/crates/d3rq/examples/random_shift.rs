//! Random-shift augmentation on a synthetic image: replicate padding,
//! forced sub-pixel shifts through the bilinear sampler, and a seeded batch.
//!
//!     cargo run --example random_shift

use d3rq::augment::{augment_batch, pad_replicate, shift_with, ImageTensor};
use d3rq::rng::DetRng;

fn render(img: &ImageTensor) {
    for y in 0..img.height {
        let row: String = (0..img.width)
            .map(|x| match img.at(0, y, x) {
                v if v < 0.25 => ' ',
                v if v < 0.5 => '.',
                v if v < 0.75 => 'o',
                _ => '#',
            })
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> d3rq::Result<()> {
    // a bright square on a dark background
    let mut img = ImageTensor::zeros(1, 8, 8);
    for y in 2..6 {
        for x in 2..6 {
            img.set(0, y, x, 1.0);
        }
    }
    println!("original 8x8:");
    render(&img);

    let padded = pad_replicate(&img, 2);
    println!("\nreplicate-padded to {}x{}:", padded.height, padded.width);
    render(&padded);

    for shift in [(2.0, 0.0), (0.5, 0.5), (-1.5, 1.0)] {
        let out = shift_with(&img, 4, shift)?;
        println!("\nshift ({}, {}):", shift.0, shift.1);
        render(&out);
    }

    // one independent continuous shift per batch entry, seeded
    let batch = vec![img.clone(), img.clone(), img];
    let mut rng = DetRng::stream(7, "augment", 0);
    let shifted = augment_batch(&batch, 4, &mut rng)?;
    println!("\nseeded batch of 3 (each entry gets its own shift):");
    for (i, out) in shifted.iter().enumerate() {
        println!("entry {i}:");
        render(out);
    }
    Ok(())
}
