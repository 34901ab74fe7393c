mod checkpoint;
mod image;

pub use checkpoint::{
    restore_models, restore_trainer, stored_accuracy, trainer_checkpoint, Checkpoint, BLOB_FILE, MANIFEST_FILE,
};
pub use image::{batch_item, from_u8, hconcat, read_image, to_u8, write_image};
