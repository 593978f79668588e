# Article corpus -> curated image-caption pairs
