# fracture-distill package tests
