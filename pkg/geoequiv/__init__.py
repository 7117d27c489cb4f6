# GeoEquiv package
