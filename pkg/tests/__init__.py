# Test suite for whisper2speech