//! JPEG-style degradation, bilinear resizing and color statistics on the
//! black-and-white test card.

use aeforge::datagen::generate_test_card;
use aeforge::imaging::{bw_fraction, jpeg_degrade, resize_bilinear, save_ppm, unique_colors, QuantTables};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let card = generate_test_card(1, 128, 128)?;
    println!("card: {} colors, bw {:.5}", unique_colors(&card), bw_fraction(&card));
    for q in [100, 95, 75, 50] {
        let out = jpeg_degrade(&card, q)?;
        println!("jpeg q{q}: {} colors, bw {:.5}", unique_colors(&out), bw_fraction(&out));
    }
    let half = resize_bilinear(&card, 0.5)?;
    println!("resize 50%: {}x{}, {} colors", half.width(), half.height(), unique_colors(&half));
    print!("{}", QuantTables::for_quality(75)?);

    let dir = std::env::temp_dir().join("aeforge-examples");
    std::fs::create_dir_all(&dir)?;
    save_ppm(&jpeg_degrade(&card, 50)?, dir.join("card_q50.ppm"))?;
    println!("wrote {}", dir.join("card_q50.ppm").display());
    Ok(())
}
