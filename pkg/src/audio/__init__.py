# Frame domains, feature containers and prosody