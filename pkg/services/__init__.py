# Services package for the QSD / traveling-wave lab
