//! Writes a few tensors as one GSPC archive and reads them back.

use std::io::Cursor;

use layerpca::tensor::{read_all, write_archive, TensorBlock};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let latents = TensorBlock::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.25]])?;
    let image = TensorBlock::from_f64(vec![3, 2, 2], &[0.1; 12])?;

    let mut bytes = Vec::new();
    write_archive(&[&latents, &image], &mut bytes)?;
    println!("archive is {} bytes, header {:?}", bytes.len(), &bytes[..6]);

    let back = read_all(&mut Cursor::new(bytes))?;
    for t in &back {
        println!("dims {:?}, first value {}", t.dims(), t.data()[0]);
    }
    assert_eq!(back, vec![latents, image]);
    Ok(())
}
