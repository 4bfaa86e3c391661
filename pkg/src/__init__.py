# whisper2speech source package