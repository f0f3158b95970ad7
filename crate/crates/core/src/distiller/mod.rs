//! Knowledge distillation: key-attribute rewriting, an attribute-aware
//! teacher, and a student trained with CE plus [CLS] alignment.

pub mod inputs;
pub mod keyattr;
pub mod loss;
pub mod train;

pub use inputs::{student_input, teacher_input};
pub use keyattr::{rewrite_cot, KeyAttrString, KEY_ATTR_CAP};
pub use loss::{distill_loss, DistillLoss};
pub use train::{
    train_student, train_teacher, DistillConfig, EncoderTrainConfig, EpochStats, StudentClassifier,
    TeacherClassifier, TeacherData, TrainReport,
};
