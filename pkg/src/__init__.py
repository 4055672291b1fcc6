# nonholo-kam package initialization