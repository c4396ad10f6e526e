"""AMP with a universal denoiser built on context quantization and GM learning."""
